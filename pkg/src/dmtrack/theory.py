"""Closed-form constants and bounds for the masked tracking recursion.

Everything here is a pure function of scalar problem moduli, so experiment
scripts and tests can sweep parameter grids without touching the simulator.

Quantities:
  contraction C(alpha)    dual-error contraction factor of the noise-free map
  alpha_max_t1            stepsize cap phi^2 / (2 ||A||^2 L)
  alpha_max_t2            supremum of stepsizes passing the second-stage test
                          (implicit in alpha, resolved by bisection)
  N_zeta, mse_bounds      stationary error band for geometrically decaying masks
  q_interval              admissible mask-decay interval (q_min, 1)
  privacy_epsilon         cumulative privacy loss of the masked recursion
  epsilon_star            its best-case limit as the eta-mask budget grows

The epsilon denominator has two variants in circulation:
phi q^2 - alpha ||A||^2 q - alpha ||A||^2 (consistent with the root
polynomial that drives the perturbation recursion; the default here) and
phi q^2 - alpha q - alpha (a simplified form that drops ||A||^2; available
via printed_form=True). They coincide when ||A|| = 1.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np

from .errors import InadmissibleDecayError

BISECT_TOL = 1e-12
_GRID = 2048


def contraction_C(alpha, phi_under, L_bar, A_norm, lamAA_min):
    """Contraction factor; < 1 exactly when 0 < alpha < 2 phi^2 / (L ||A||^2)."""
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    if min(phi_under, L_bar, A_norm, lamAA_min) <= 0:
        raise ValueError("moduli must be positive")
    radicand = 1.0 + (A_norm**2 * alpha**2 / phi_under**2 - 2.0 * alpha / L_bar) * lamAA_min
    if radicand < 0:
        raise ValueError(
            f"contraction radicand is negative ({radicand:.3e}) at alpha={alpha:g}; "
            "the stepsize is far outside the admissible range"
        )
    return math.sqrt(radicand)


class StepsizeBounds(NamedTuple):
    alpha_max_t1: float
    alpha_max_t2: float
    admissible: bool  # False when no alpha passes the second-stage test


def _second_stage_ok(alpha, mod, lambda_bar, r):
    """Both implicit stepsize clauses at a given alpha (first-stage cap assumed)."""
    C = contraction_C(alpha, mod.phi_under, mod.L_bar, mod.A_norm, mod.lamAA_min)
    one_minus = 1.0 - C
    rhs = (
        mod.phi_under
        * (-one_minus + math.sqrt(one_minus**2 + 2.0 * one_minus * (1.0 - lambda_bar) ** 2))
        / (2.0 * mod.A_norm)
    )
    if not alpha < rhs:
        return False
    if r is not None:
        # the rate certificate only applies for r above both contraction
        # factors; below them the product test can pass vacuously by a
        # double sign flip
        if not (r > C and r > lambda_bar):
            return False
        lhs = ((r - C) * mod.phi_under / (alpha * mod.A_norm)) * (
            (r - lambda_bar) ** 2 * mod.phi_under / (2.0 * alpha * mod.A_norm) - 1.0
        )
        if not lhs > 1.0:
            return False
    return True


def stepsize_bounds(mod, lambda_bar, r=None):
    """Largest admissible stepsizes for the two convergence regimes.

    alpha_max_t1 is the closed-form cap. alpha_max_t2 is the supremum of
    alphas below that cap passing the implicit second-stage inequalities,
    located by a grid scan plus bisection (the tests verify the predicate
    is monotone across the bracket). A configuration where nothing passes
    returns alpha_max_t2 = 0 with admissible=False instead of raising.
    """
    if not 0.0 <= lambda_bar < 1.0:
        raise ValueError(f"lambda_bar must be in [0, 1), got {lambda_bar}")
    t1 = mod.phi_under**2 / (2.0 * mod.A_norm**2 * mod.L_bar)
    xs = np.linspace(t1 / _GRID, t1 * (1.0 - 1e-12), _GRID)
    flags = [_second_stage_ok(a, mod, lambda_bar, r) for a in xs]
    if not any(flags):
        return StepsizeBounds(t1, 0.0, False)
    last = max(i for i, f in enumerate(flags) if f)
    if last == len(xs) - 1:
        # admissible all the way to the open first-stage cap
        return StepsizeBounds(t1, t1, True)
    lo, hi = float(xs[last]), float(xs[last + 1])
    while hi - lo > BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if _second_stage_ok(mid, mod, lambda_bar, r):
            lo = mid
        else:
            hi = mid
    return StepsizeBounds(t1, 0.5 * (lo + hi), True)


class MseBounds(NamedTuple):
    lower: float
    upper: float
    N_zeta: float


def mse_bounds(schedule, mod, n, m):
    """Two-sided stationary bound on E||x - x*||^2 under decaying masks."""
    if schedule.n != n:
        raise ValueError(f"schedule covers {schedule.n} agents, expected {n}")
    d = np.asarray(schedule.d_zeta, dtype=float)
    q = np.asarray(schedule.q_zeta, dtype=float)
    active = d > 0
    if np.any(q[active] >= 1.0):
        raise ValueError("divergent noise: some q_zeta >= 1 with positive scale")
    N_zeta = float(np.sum(2.0 * m * d[active] ** 2 / (1.0 - q[active] ** 2)))
    lower = N_zeta / (n**2 * mod.A_norm**2)
    upper = mod.L_bar**2 * N_zeta / (n * mod.phi_under**2 * mod.lamAA_min**2)
    return MseBounds(lower, upper, N_zeta)


class QInterval(NamedTuple):
    q_min: float
    q_max: float  # always 1.0; the interval is open on both ends
    tau1: float
    tau2: float


def q_interval(alpha, phi_i0, A_i0_norm):
    """Admissible decay interval (q_min, 1) for the audited agent.

    tau1, tau2 are the roots of phi x^2 - alpha ||A||^2 x - alpha ||A||^2,
    the characteristic polynomial of the perturbation recursion; q_min
    coincides with the larger root.
    """
    if alpha <= 0 or phi_i0 <= 0 or A_i0_norm <= 0:
        raise ValueError("alpha, phi, and the coupling norm must be positive")
    disc = math.sqrt(alpha**2 * A_i0_norm**2 + 4.0 * alpha * phi_i0)
    q_min = (alpha * A_i0_norm**2 + A_i0_norm * disc) / (2.0 * phi_i0)
    tau1 = q_min
    tau2 = (alpha * A_i0_norm**2 - A_i0_norm * disc) / (2.0 * phi_i0)
    if q_min >= 1.0:
        raise InadmissibleDecayError(
            f"q_min = {q_min:.6g} >= 1: no admissible decay at alpha={alpha:g}; reduce alpha"
        )
    # tau2 = -tau1/(1+tau1) for these coefficients, so -1 < tau2 < 0 < tau1 < 1
    assert -1.0 < tau2 < 0.0 < tau1 < 1.0
    return QInterval(q_min, 1.0, tau1, tau2)


def _denominator(alpha, phi_i0, A_i0_norm, q_i0, printed_form):
    if printed_form:
        return phi_i0 * q_i0**2 - alpha * q_i0 - alpha
    return phi_i0 * q_i0**2 - alpha * A_i0_norm**2 * q_i0 - alpha * A_i0_norm**2


def _check_q(alpha, phi_i0, A_i0_norm, q_i0):
    interval = q_interval(alpha, phi_i0, A_i0_norm)
    if not interval.q_min < q_i0 < 1.0:
        raise InadmissibleDecayError(
            f"q = {q_i0:g} outside the admissible interval "
            f"({interval.q_min:.6g}, 1) at alpha={alpha:g}"
        )
    return interval


def privacy_epsilon(alpha, d_zeta, d_eta, phi_i0, A_i0_norm, q_i0, delta, printed_form=False):
    """Cumulative privacy loss of the audited agent over an infinite run.

    d_eta may be math.inf (eta masking cost ignored); delta is the
    adjacency radius. printed_form selects the simplified denominator.
    """
    if d_zeta <= 0 or d_eta <= 0:
        raise ValueError("noise scales must be positive (inf allowed)")
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    _check_q(alpha, phi_i0, A_i0_norm, q_i0)
    D = _denominator(alpha, phi_i0, A_i0_norm, q_i0, printed_form)
    if D <= 0:
        raise InadmissibleDecayError(
            f"epsilon denominator {D:.6g} is nonpositive at q={q_i0:g} "
            f"(printed_form={printed_form})"
        )
    return (1.0 / (alpha * d_zeta) + 1.0 / d_eta) * alpha * phi_i0 * delta * A_i0_norm / D


def epsilon_star(alpha, d_zeta, phi_i0, A_i0_norm, q_i0, delta, printed_form=False):
    """Infinite-eta-budget limit of privacy_epsilon."""
    return privacy_epsilon(
        alpha, d_zeta, math.inf, phi_i0, A_i0_norm, q_i0, delta, printed_form=printed_form
    )


class TheoryConstants(NamedTuple):
    C: float
    lambda_bar: float
    r_lb: float
    alpha_max_t1: float
    alpha_max_t2: float
    tau1: float
    tau2: float


def theory_constants(alpha, mod, lambda_bar, schedule=None, phi_i0=None, A_i0_norm=None):
    """Bundle every scalar constant the experiment reports need.

    phi_i0 / A_i0_norm default to the global moduli (correct when agents are
    homogeneous; pass the audited agent's values otherwise). r_lb folds in
    the mask decays when a schedule is given.
    """
    phi_i0 = mod.phi_under if phi_i0 is None else phi_i0
    A_i0_norm = mod.A_norm if A_i0_norm is None else A_i0_norm
    C = contraction_C(alpha, mod.phi_under, mod.L_bar, mod.A_norm, mod.lamAA_min)
    bounds = stepsize_bounds(mod, lambda_bar)
    interval = q_interval(alpha, phi_i0, A_i0_norm)
    r_lb = max(C, lambda_bar)
    if schedule is not None and schedule.enabled:
        r_lb = max(r_lb, float(np.max(schedule.q_eta)), float(np.max(schedule.q_zeta)))
    return TheoryConstants(
        C=C,
        lambda_bar=lambda_bar,
        r_lb=r_lb,
        alpha_max_t1=bounds.alpha_max_t1,
        alpha_max_t2=bounds.alpha_max_t2,
        tau1=interval.tau1,
        tau2=interval.tau2,
    )
