"""Differentially private distributed mismatch tracking, simulated and audited.

A toolkit for studying a masked dual-tracking algorithm for resource
allocation over undirected networks: agents minimize private quadratic costs
subject to a coupling equality constraint, exchange Laplace-masked dual and
tracker variables over a doubly stochastic gossip matrix, and trade
stationary accuracy against a differential privacy budget through the decay
and scale of the masks.

Subpackages by concern: topology (graphs and mixing matrices), problem
(costs, constraints, instances), local_solver (per-agent argmin updates),
noise (counter-based mask streams), engine (the round-based recursion),
oracle (centralized ground truth), theory (closed-form constants and
bounds), privacy_audit (forced-difference certification), harness + cli
(experiment orchestration).
"""

from .engine import EngineState, RunConfig, RunTrace, fixed_point_residual, init_state, run, step
from .errors import (
    ConfigError,
    DmtrackError,
    InadmissibleDecayError,
    InfeasibleProblemError,
    SolverFailure,
)
from .harness import ExperimentConfig, PRESETS, materialize, run_experiment, sweep
from .local_solver import ArgminResult, argmin_local, conjugate_smoothness_check, solve_all
from .noise import NoiseLog, NoiseSchedule, draw_round, draw_round_all, sample_laplace
from .oracle import OptSolution, solve_dual, verify_against_grid
from .privacy_audit import (
    AdjacentPair,
    AuditReport,
    eta_bound_check,
    forced_difference_run,
    make_adjacent_pair,
    sweep_epsilon,
)
from .problem import (
    AgentSpec,
    BoxSet,
    Moduli,
    ProblemInstance,
    QuadraticCost,
    moduli,
    shift_adjacent,
)
from .theory import (
    MseBounds,
    QInterval,
    StepsizeBounds,
    TheoryConstants,
    contraction_C,
    epsilon_star,
    mse_bounds,
    privacy_epsilon,
    q_interval,
    stepsize_bounds,
    theory_constants,
)
from .topology import Graph, MixingMatrix, metropolis_weights, ring_plus_random, spectral_gap

__version__ = "0.1.0"

__all__ = [
    "AdjacentPair",
    "AgentSpec",
    "ArgminResult",
    "AuditReport",
    "BoxSet",
    "ConfigError",
    "DmtrackError",
    "EngineState",
    "ExperimentConfig",
    "Graph",
    "InadmissibleDecayError",
    "InfeasibleProblemError",
    "MixingMatrix",
    "Moduli",
    "MseBounds",
    "NoiseLog",
    "NoiseSchedule",
    "OptSolution",
    "PRESETS",
    "ProblemInstance",
    "QInterval",
    "QuadraticCost",
    "RunConfig",
    "RunTrace",
    "SolverFailure",
    "StepsizeBounds",
    "TheoryConstants",
    "argmin_local",
    "conjugate_smoothness_check",
    "contraction_C",
    "draw_round",
    "draw_round_all",
    "epsilon_star",
    "eta_bound_check",
    "fixed_point_residual",
    "forced_difference_run",
    "init_state",
    "make_adjacent_pair",
    "materialize",
    "metropolis_weights",
    "moduli",
    "mse_bounds",
    "privacy_epsilon",
    "q_interval",
    "ring_plus_random",
    "run",
    "run_experiment",
    "sample_laplace",
    "shift_adjacent",
    "solve_all",
    "solve_dual",
    "spectral_gap",
    "step",
    "stepsize_bounds",
    "sweep",
    "sweep_epsilon",
    "theory_constants",
    "verify_against_grid",
]
