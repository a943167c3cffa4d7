"""Tabular OptiDICE: offline RL by stationary distribution correction estimation."""
from .baselines import BaselineConfig, basic_rl, ramdp, spibb
from .bench import (
    AggregateReport,
    AlgorithmSpec,
    BenchmarkConfig,
    RunRecord,
    construct_behavior_policy,
    cvar,
    generate_random_mdp,
    normalized_performance,
    run_benchmark,
)
from .divergence import CHI2, KL, SOFT_CHI2, FDivergence, get_divergence
from .mdp import (
    Dataset,
    TabularMdp,
    empirical_distribution,
    evaluate_policy,
    flow_residual,
    mle_mdp,
    sample_trajectories,
    solve_optimal,
    stationary_distribution,
)
from .solver import (
    DualVariables,
    SolveResult,
    SolverConfig,
    UnsupportedDivergence,
    advantage,
    dual_gradient,
    dual_objective,
    extract_policy,
    grad_hess_chi2,
    jensen_upper_bound,
    primal_value,
    solve,
    solve_first_order,
    solve_newton_chi2,
)

__version__ = "0.1.0"
