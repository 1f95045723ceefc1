"""Decaying Laplace masks and their audit log.

Each agent i adds masks eta_i(k) to its dual and zeta_i(k) to its tracker
before broadcasting. Coordinates are independent Laplace draws with scales
theta_eta(i, k) = d_eta_i * q_eta_i**k and theta_zeta(i, k) = d_zeta_i * q_zeta_i**k.

Randomness is counter-based: round k owns one Philox block keyed by the master
seed with the round index in the counter, and agent i's draws are a fixed slice
of that block. A draw is therefore a pure function of (seed, agent, round,
mask kind, coordinate), independent of evaluation order and thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Floor for 1 - 2|u| so the inverse CDF never evaluates log(0).
_CDF_FLOOR = np.finfo(float).tiny


def _as_per_agent(value, n, name):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {value}")
    return arr


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-agent scales and decay coefficients, or the all-zero schedule."""

    d_eta: np.ndarray
    d_zeta: np.ndarray
    q_eta: np.ndarray
    q_zeta: np.ndarray
    zero_noise: bool = False

    def __post_init__(self):
        n = np.atleast_1d(np.asarray(self.d_eta, dtype=float)).shape[0]
        d_eta = _as_per_agent(self.d_eta, n, "d_eta")
        d_zeta = _as_per_agent(self.d_zeta, n, "d_zeta")
        q_eta = _as_per_agent(self.q_eta, n, "q_eta")
        q_zeta = _as_per_agent(self.q_zeta, n, "q_zeta")
        if np.any(d_eta < 0) or np.any(d_zeta < 0):
            raise ValueError("noise scales must be nonnegative")
        if not self.zero_noise:
            for name, q in (("q_eta", q_eta), ("q_zeta", q_zeta)):
                if np.any(q <= 0.0) or np.any(q >= 1.0):
                    raise ValueError(f"{name} must lie strictly in (0, 1)")
        object.__setattr__(self, "d_eta", d_eta)
        object.__setattr__(self, "d_zeta", d_zeta)
        object.__setattr__(self, "q_eta", q_eta)
        object.__setattr__(self, "q_zeta", q_zeta)

    @classmethod
    def uniform(cls, n, d_eta=1.0, d_zeta=1.0, q=0.98, q_eta=None, q_zeta=None):
        """Same scales for every agent; per-mask decay defaults to the shared q."""
        q_eta = q if q_eta is None else q_eta
        q_zeta = q if q_zeta is None else q_zeta
        return cls(
            d_eta=np.full(n, float(d_eta)),
            d_zeta=np.full(n, float(d_zeta)),
            q_eta=np.full(n, float(q_eta)),
            q_zeta=np.full(n, float(q_zeta)),
        )

    @classmethod
    def disabled(cls, n):
        return cls(
            d_eta=np.zeros(n),
            d_zeta=np.zeros(n),
            q_eta=np.full(n, 0.5),
            q_zeta=np.full(n, 0.5),
            zero_noise=True,
        )

    @property
    def n(self):
        return self.d_eta.shape[0]

    @property
    def enabled(self):
        return bool(not self.zero_noise and (np.any(self.d_eta > 0) or np.any(self.d_zeta > 0)))

    def theta_eta(self, k):
        """Scales of the dual masks at round k, shape (n,)."""
        return self.d_eta * self.q_eta**k

    def theta_zeta(self, k):
        return self.d_zeta * self.q_zeta**k


def _laplace_from_uniform(u, theta):
    """Inverse CDF of Laplace(theta) applied to u in [-1/2, 1/2)."""
    t = np.maximum(1.0 - 2.0 * np.abs(u), _CDF_FLOOR)
    return -theta * np.sign(u) * np.log(t)


def sample_laplace(theta, stream, size=None):
    """Exact Laplace(theta) draw(s) via the inverse CDF; one uniform per draw.

    E|x| = theta and E[x^2] = 2 theta^2. Returns a scalar when size is None.
    """
    if theta <= 0:
        raise ValueError(f"theta must be positive, got {theta}")
    u = stream.random(size) - 0.5
    x = _laplace_from_uniform(u, theta)
    return float(x) if size is None else x


def _round_generator(seed, k):
    # One Philox block per round; the round index lives in the high counter
    # word so in-round draws never collide with other rounds.
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, k]))


def _round_uniforms(seed, k, n, m):
    """The (n, 2m) uniform block for round k: row i = agent i, eta then zeta."""
    return _round_generator(seed, k).random((n, 2 * m)) - 0.5


def draw_round_all(schedule, k, seed, m):
    """Masks for every agent at round k: returns (eta, zeta), each (n, m).

    Scaling by theta keeps stream alignment: a disabled mask (scale 0) still
    consumes its uniforms, so enabling it does not shift any other draw.
    """
    if k < 0:
        raise ValueError(f"round index must be nonnegative, got {k}")
    n = schedule.n
    if schedule.zero_noise:
        return np.zeros((n, m)), np.zeros((n, m))
    u = _round_uniforms(seed, k, n, m)
    eta = _laplace_from_uniform(u[:, :m], schedule.theta_eta(k)[:, None])
    zeta = _laplace_from_uniform(u[:, m:], schedule.theta_zeta(k)[:, None])
    return eta, zeta


def draw_round(schedule, k, seed, agent, m):
    """Masks (eta_i, zeta_i) for one agent; identical to its draw_round_all slice."""
    if not 0 <= agent < schedule.n:
        raise ValueError(f"agent index {agent} out of range")
    eta, zeta = draw_round_all(schedule, k, seed, m)
    return eta[agent].copy(), zeta[agent].copy()


@dataclass(eq=False)
class NoiseLog:
    """Recorded masks: eta and zeta with shape (rounds, n, m)."""

    eta: np.ndarray
    zeta: np.ndarray

    @property
    def rounds(self):
        return self.eta.shape[0]

    def zeta_sum_before(self, k):
        """sum over t < k and over agents of zeta_i(t), shape (m,)."""
        return self.zeta[:k].sum(axis=(0, 1))
