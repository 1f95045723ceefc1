"""Synchronous round-based simulation of the masked mismatch tracking recursion.

Round k, executed with snapshot semantics (every agent reads only round-k
state of its neighbors):

    z_mu_j(k) = mu_j(k) + eta_j(k),  z_y_j(k) = y_j(k) + zeta_j(k)   (broadcast)
    mu_i(k+1) = sum_j w_ij z_mu_j(k) - alpha y_i(k)                  (local y, unmasked)
    x_i(k+1)  = argmin_{z in X_i} { f_i(z) - mu_i(k+1)^T A_i z }
    y_i(k+1)  = sum_j w_ij z_y_j(k) + A_i x_i(k+1) - A_i x_i(k)

with y_i(0) = A_i x_i(0) - d_i. Summing the tracker update over agents shows
the invariant sum_i y_i(k) = sum_i (A_i x_i(k) - d_i) + sum_{t<k} sum_i zeta_i(t),
which reduces to exact mismatch tracking when the noise is disabled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import SolverFailure
from .local_solver import solve_all_from_c, _stacked
from .noise import NoiseLog, draw_round_all


@dataclass(eq=False)
class EngineState:
    """Stacked per-agent iterates at one round."""

    mu: np.ndarray  # (n, m)
    x: np.ndarray  # (n, p)
    y: np.ndarray  # (n, m)
    round: int = 0


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Stepsize, horizon, and recording stride for one run.

    mu0 and x0 override the default initial iterates (zeros and the box
    projection of zero). alpha = 0 is allowed for the degenerate fixed-dual
    diagnostic even though productive runs need alpha > 0.
    """

    alpha: float
    iters: int
    record_every: int = 1
    mu0: Optional[np.ndarray] = None
    x0: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if self.iters < 1:
            raise ValueError(f"iters must be at least 1, got {self.iters}")
        if self.record_every < 1:
            raise ValueError(f"record_every must be at least 1, got {self.record_every}")


@dataclass(eq=False)
class RunTrace:
    """Per-round metrics plus the final state and the complete noise log.

    tracking_residual is the tracking-identity defect scaled by
    1 / (1 + magnitude of the states entering it), so a healthy run stays
    below 1e-9 regardless of problem scale. mse is NaN when no reference
    optimum was supplied.
    """

    ks: np.ndarray
    mse: np.ndarray
    consensus_mu: np.ndarray
    tracking_residual: np.ndarray
    feasibility: np.ndarray
    final_state: EngineState
    noise_log: NoiseLog
    x_star: Optional[np.ndarray] = None
    states_mu: Optional[np.ndarray] = None
    states_x: Optional[np.ndarray] = None

    def max_tracking_residual(self):
        return float(np.max(self.tracking_residual))


def init_state(instance, config):
    """Initial iterates; the tracker must start at the local mismatch."""
    n, m, p = instance.dims
    stk = _stacked(instance)
    if config.x0 is not None:
        x0 = np.asarray(config.x0, dtype=float).reshape(n, p).copy()
    else:
        x0 = np.clip(np.zeros((n, p)), stk["lo"], stk["hi"])
    if config.mu0 is not None:
        mu0 = np.asarray(config.mu0, dtype=float).reshape(n, m).copy()
    else:
        mu0 = np.zeros((n, m))
    y0 = np.einsum("imp,ip->im", stk["A"], x0) - stk["d"]
    return EngineState(mu=mu0, x=x0, y=y0, round=0)


def _advance(instance, stk, W, alpha, mu, x, y, Ax, eta, zeta):
    """One synchronous round; returns (mu1, x1, y1, Ax1)."""
    z_mu = mu + eta
    z_y = y + zeta
    mu1 = W @ z_mu - alpha * y
    c = np.einsum("imp,im->ip", stk["A"], mu1)
    x1 = solve_all_from_c(instance, c, stk=stk)
    Ax1 = np.einsum("imp,ip->im", stk["A"], x1)
    y1 = W @ z_y + Ax1 - Ax
    return mu1, x1, y1, Ax1


def step(state, instance, W, schedule, config, seed, noise=None):
    """Advance one round. `noise` overrides sampling with given (eta, zeta) arrays."""
    W = np.asarray(getattr(W, "W", W), dtype=float)
    stk = _stacked(instance)
    if noise is None:
        eta, zeta = draw_round_all(schedule, state.round, seed, instance.m)
    else:
        eta, zeta = noise
    Ax = np.einsum("imp,ip->im", stk["A"], state.x)
    try:
        mu1, x1, y1, _ = _advance(
            instance, stk, W, config.alpha, state.mu, state.x, state.y, Ax, eta, zeta
        )
    except SolverFailure as exc:
        raise SolverFailure(f"round {state.round}: {exc}") from exc
    return EngineState(mu=mu1, x=x1, y=y1, round=state.round + 1)


def fixed_point_residual(state, instance, W):
    """(||(I - W) mu||, ||y||, ||sum_i (A_i x_i - d_i)||); all vanish at a fixed point."""
    W = np.asarray(getattr(W, "W", W), dtype=float)
    stk = _stacked(instance)
    consensus_mu = float(np.linalg.norm(state.mu - W @ state.mu))
    y_norm = float(np.linalg.norm(state.y))
    mismatch = np.einsum("imp,ip->im", stk["A"], state.x) - stk["d"]
    feasibility = float(np.linalg.norm(mismatch.sum(axis=0)))
    return consensus_mu, y_norm, feasibility


def run(instance, W, schedule, config, seed, x_star=None, replay=None, keep_states=False):
    """Run `config.iters` rounds and record metrics every `config.record_every`.

    replay : NoiseLog, optional
        Re-feeds previously recorded masks instead of sampling, reproducing
        the original trajectory bit for bit.
    keep_states : bool
        Additionally record the full mu and x trajectories (used by the
        privacy auditor).
    """
    W = np.asarray(getattr(W, "W", W), dtype=float)
    n, m, p = instance.dims
    stk = _stacked(instance)
    state = init_state(instance, config)
    mu, x, y = state.mu, state.x, state.y
    Ax = np.einsum("imp,ip->im", stk["A"], x)

    iters = config.iters
    if replay is not None and replay.rounds < iters:
        raise ValueError(f"replay log has {replay.rounds} rounds, need {iters}")
    eta_log = np.empty((iters, n, m))
    zeta_log = np.empty((iters, n, m))
    zeta_cum = np.zeros(m)

    ks, mses, cons, tracks, feas = [], [], [], [], []
    if keep_states:
        states_mu = np.empty((iters + 1, n, m))
        states_x = np.empty((iters + 1, n, p))
        states_mu[0], states_x[0] = mu, x

    def record(k):
        ks.append(k)
        if x_star is None:
            mses.append(np.nan)
        else:
            mses.append(float(np.sum((x - x_star) ** 2)))
        cons.append(float(np.linalg.norm(mu - W @ mu)))
        mismatch = (np.einsum("imp,ip->im", stk["A"], x) - stk["d"]).sum(axis=0)
        defect = y.sum(axis=0) - mismatch - zeta_cum
        magnitude = float(np.linalg.norm(y) + np.linalg.norm(mismatch) + np.linalg.norm(zeta_cum))
        tracks.append(float(np.linalg.norm(defect)) / (1.0 + magnitude))
        feas.append(float(np.linalg.norm(mismatch)))

    record(0)
    for k in range(iters):
        if replay is not None:
            eta, zeta = replay.eta[k], replay.zeta[k]
        else:
            eta, zeta = draw_round_all(schedule, k, seed, m)
        eta_log[k], zeta_log[k] = eta, zeta
        try:
            mu, x, y, Ax = _advance(instance, stk, W, config.alpha, mu, x, y, Ax, eta, zeta)
        except SolverFailure as exc:
            raise SolverFailure(f"round {k}: {exc}") from exc
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise SolverFailure(f"round {k + 1}: state diverged to non-finite values")
        zeta_cum += zeta.sum(axis=0)
        if keep_states:
            states_mu[k + 1], states_x[k + 1] = mu, x
        if (k + 1) % config.record_every == 0 or k + 1 == iters:
            record(k + 1)

    return RunTrace(
        ks=np.asarray(ks, dtype=int),
        mse=np.asarray(mses),
        consensus_mu=np.asarray(cons),
        tracking_residual=np.asarray(tracks),
        feasibility=np.asarray(feas),
        final_state=EngineState(mu=mu, x=x, y=y, round=iters),
        noise_log=NoiseLog(eta=eta_log, zeta=zeta_log),
        x_star=None if x_star is None else np.asarray(x_star, dtype=float),
        states_mu=states_mu if keep_states else None,
        states_x=states_x if keep_states else None,
    )
