"""Shared fixtures. The expensive Monte Carlo artifacts are built once per
session and reused by both the module tests and the acceptance gate."""

import time

import pytest

from dmtrack.engine import RunConfig, run
from dmtrack.harness import PRESETS, ExperimentConfig, sweep
from dmtrack.noise import NoiseSchedule
from dmtrack.oracle import solve_dual
from dmtrack.privacy_audit import sweep_epsilon
from dmtrack.problem import moduli
from dmtrack.theory import stepsize_bounds
from dmtrack.topology import metropolis_weights


def build_preset(name):
    instance, graph = PRESETS[name]()
    W = metropolis_weights(graph)
    return instance, W, moduli(instance)


# iters, record_every; the two small presets converge in a few hundred rounds
NOISE_FREE_PLAN = {
    "symmetric2": (3000, 1),
    "hand_kkt": (3000, 1),
    "microgrid14": (10_000, 10),
}


@pytest.fixture(scope="session")
def noise_free_runs():
    """One noise-free trajectory per preset at alpha = 0.9 * alpha_max_t2."""
    out = {}
    for name, (iters, every) in NOISE_FREE_PLAN.items():
        instance, W, mod = build_preset(name)
        alpha = 0.9 * stepsize_bounds(mod, W.lambda_bar).alpha_max_t2
        sol = solve_dual(instance)
        cfg = RunConfig(alpha=alpha, iters=iters, record_every=every)
        t0 = time.perf_counter()
        trace = run(
            instance, W, NoiseSchedule.disabled(instance.n), cfg, 0, x_star=sol.x_star
        )
        elapsed = time.perf_counter() - t0
        out[name] = {
            "trace": trace,
            "sol": sol,
            "alpha": alpha,
            "elapsed": elapsed,
            "iters": iters,
        }
    return out


@pytest.fixture(scope="session")
def micro_sweep(tmp_path_factory):
    """d_zeta sweep on the 14-agent preset.

    The d_zeta = 1.0 entry is the reference noisy experiment: q = 0.98,
    d_eta = 1, 100 trials of 5000 rounds each.
    """
    outdir = tmp_path_factory.mktemp("micro_sweep")
    config = ExperimentConfig.from_dict(
        {
            "problem": {"preset": "microgrid14"},
            "algorithm": {"alpha": {"frac_of_t2": 0.9}, "iters": 5000, "record_every": 10},
            "noise": {"enabled": True, "d_eta": 1.0, "d_zeta": 1.0, "q": 0.98},
            "trials": 100,
            "seed": 20230814,
            "output": str(outdir),
        }
    )
    t0 = time.perf_counter()
    rows, summaries = sweep(config, "d_zeta", (0.5, 1.0, 2.0, 4.0), out_dir=outdir)
    elapsed = time.perf_counter() - t0
    return {"rows": rows, "summaries": summaries, "elapsed": elapsed, "config": config}


@pytest.fixture(scope="session")
def audit_grid():
    """Privacy certificate grid on the 2-agent preset at alpha = 0.45."""
    instance, W, _ = build_preset("symmetric2")
    cfg = RunConfig(alpha=0.45, iters=1)
    rows, flags = sweep_epsilon(
        instance, W, 0, (0.5, 1.0, 2.0), (0.95, 0.98, 0.99), cfg, seed=11, delta=1.0
    )
    return {"rows": rows, "flags": flags}
