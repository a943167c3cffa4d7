"""Random-MDP robustness benchmark.

Each run draws a fresh random MDP and a zeta-optimal behavior policy, samples
N trajectories for every N in the sweep, hands the identical dataset to every
algorithm, and scores the returned policies on the true MDP.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .baselines import basic_rl, ramdp, spibb
from .mdp import (
    Dataset,
    TabularMdp,
    evaluate_policy,
    greedy_policy,
    mle_mdp,
    sample_trajectories,
    solve_optimal,
    stationary_distribution,
    uniform_policy,
)
from .solver import SolverConfig, extract_policy, solve_newton_chi2

__all__ = [
    "ALGORITHMS",
    "AlgorithmSpec",
    "BenchmarkConfig",
    "RunRecord",
    "AggregateReport",
    "generate_random_mdp",
    "goal_values",
    "construct_behavior_policy",
    "normalized_performance",
    "cvar",
    "bootstrap_ci",
    "bootstrap_cvar_pvalue",
    "run_single",
    "run_benchmark",
    "aggregate",
    "write_runs_csv",
]

logger = logging.getLogger(__name__)

N_STATES = 50
N_ACTIONS = 4
DISCOUNT = 0.95
CONNECTIVITY = 4
MAX_STEPS = 250
START_STATE = 0


# ---------------------------------------------------------------------------
# instance generation
# ---------------------------------------------------------------------------

def goal_values(transition: np.ndarray, discount: float, start: int,
                tol: float = 1e-10) -> np.ndarray:
    """Optimal value at ``start`` when each state in turn is the rewarding goal.

    With goal ``g`` the value is ``max_pi E[discount^tau_g]``. All goals are
    iterated together: ``V[g, s] = discount * max_a T[s, a] . V[g]``, pinned to
    1 at ``s = g``.
    """
    n = transition.shape[0]
    eye = np.eye(n, dtype=bool)
    v = eye.astype(float)
    while True:
        nxt = discount * np.einsum("sat,gt->gsa", transition, v).max(axis=2)
        nxt[eye] = 1.0
        delta = np.max(np.abs(nxt - v))
        v = nxt
        if delta <= tol:
            return v[:, start]


def _attach_goal(transition: np.ndarray, goal: int, discount: float, start: int) -> TabularMdp:
    """Append an absorbing sink; acting in ``goal`` pays 1 and moves to the sink."""
    n, A, _ = transition.shape
    T = np.zeros((n + 1, A, n + 1))
    T[:n, :, :n] = transition
    T[goal] = 0.0
    T[goal, :, n] = 1.0
    T[n, :, n] = 1.0
    R = np.zeros((n + 1, A))
    R[goal] = 1.0
    p0 = np.zeros(n + 1)
    p0[start] = 1.0
    return TabularMdp(T, R, p0, discount)


def generate_random_mdp(seed, n_states: int = N_STATES, n_actions: int = N_ACTIONS,
                        discount: float = DISCOUNT, connectivity: int = CONNECTIVITY
                        ) -> tuple[TabularMdp, int]:
    """Random sparse-Dirichlet MDP with the hardest-to-reach goal state.

    Returns an MDP over ``n_states + 1`` states (the last one is the absorbing
    sink) and the goal index.
    """
    rng = np.random.default_rng(seed)
    transition = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            succ = rng.choice(n_states, size=connectivity, replace=False)
            transition[s, a, succ] = rng.dirichlet(np.ones(connectivity))
    values = goal_values(transition, discount, START_STATE)
    values[START_STATE] = np.inf
    goal = int(np.argmin(values))
    return _attach_goal(transition, goal, discount, START_STATE), goal


def _start_state(mdp: TabularMdp) -> int:
    return int(np.argmax(mdp.initial_dist))


def construct_behavior_policy(mdp: TabularMdp, zeta: float, v_star: np.ndarray,
                              q_star: np.ndarray, v_unif: np.ndarray, seed=0,
                              max_perturbations: int = 100_000) -> np.ndarray:
    """Soften the optimal policy, then perturb it down to zeta-optimality.

    Temperature softening ``pi ~ exp(Q*/tau)`` runs until the value at the
    start state drops to the ``(1 + zeta) / 2`` level; afterwards the optimal
    action's probability is cut by 10% at uniformly drawn states until the
    value reaches the zeta level. ``v_star`` should be the exact value of the
    greedy policy of ``q_star`` so that ``zeta = 1`` exits immediately.
    """
    if not 0.0 <= zeta <= 1.0:
        raise ValueError(f"zeta must lie in [0, 1], got {zeta}")
    rng = np.random.default_rng(seed)
    s0 = _start_state(mdp)
    target = zeta * v_star[s0] + (1.0 - zeta) * v_unif[s0]
    half_target = 0.5 * v_star[s0] + 0.5 * target

    def value(pi):
        return evaluate_policy(mdp, pi).v[s0]

    pi_soft = greedy_policy(q_star)
    tau = 1e-7
    while value(pi_soft) > half_target:
        logits = (q_star - q_star.max(axis=1, keepdims=True)) / tau
        pi_soft = np.exp(logits)
        pi_soft /= pi_soft.sum(axis=1, keepdims=True)
        tau /= 0.9

    pi = pi_soft.copy()
    best = np.argmax(q_star, axis=1)
    count = 0
    while value(pi) > target:
        if count >= max_perturbations:
            raise RuntimeError("behavior-policy perturbation did not reach the target level")
        s = rng.integers(mdp.n_states)
        pi[s, best[s]] *= 0.9
        pi[s] /= pi[s].sum()
        count += 1
    return pi


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

def normalized_performance(v_pi: float, v_behavior: float, v_star: float) -> float:
    """0 at the behavior policy's value, 1 at the optimum; 0 if the two coincide."""
    span = v_star - v_behavior
    if not span > 0:
        return 0.0
    return (v_pi - v_behavior) / span


def cvar(values: Sequence[float], level: float = 0.05) -> float:
    """Mean of the ``ceil(level * n)`` smallest values."""
    if not 0.0 < level <= 1.0:
        raise ValueError("level must lie in (0, 1]")
    x = np.sort(np.asarray(values, dtype=float))
    if len(x) == 0:
        raise ValueError("cvar of an empty list")
    k = max(1, math.ceil(round(level * len(x), 9)))
    return float(x[:k].mean())


def bootstrap_ci(values: np.ndarray, stat: Callable[[np.ndarray], float], seed,
                 n_boot: int = 1000, coverage: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval."""
    rng = np.random.default_rng(seed)
    values = np.asarray(values, dtype=float)
    idx = rng.integers(len(values), size=(n_boot, len(values)))
    stats = np.array([stat(values[i]) for i in idx])
    tail = 50.0 * (1.0 - coverage)
    lo, hi = np.percentile(stats, [tail, 100.0 - tail])
    return float(lo), float(hi)


def bootstrap_cvar_pvalue(a: np.ndarray, b: np.ndarray, level: float = 0.05, seed=0,
                          n_boot: int = 1000) -> float:
    """One-sided paired bootstrap p-value against ``cvar(a) <= cvar(b)``.

    ``a`` and ``b`` are aligned by run. The p-value is the fraction of
    resamples in which ``cvar(a) - cvar(b)`` is not positive.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    rng = np.random.default_rng(seed)
    idx = rng.integers(len(a), size=(n_boot, len(a)))
    diffs = np.array([cvar(a[i], level) - cvar(b[i], level) for i in idx])
    return float(np.mean(diffs <= 0.0))


# ---------------------------------------------------------------------------
# configuration and records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    kappa: float = 0.003
    n_wedge: int = 5
    alpha: float | None = None

    def __post_init__(self):
        if self.name not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.name!r}; expected one of {sorted(ALGORITHMS)}")

    @classmethod
    def parse(cls, item) -> "AlgorithmSpec":
        if isinstance(item, AlgorithmSpec):
            return item
        if isinstance(item, str):
            return cls(item)
        return cls(**item)


@dataclass(frozen=True)
class BenchmarkConfig:
    n_runs: int = 10
    zeta: float = 0.9
    traj_counts: tuple[int, ...] = (10, 50, 200, 1000)
    algorithms: tuple[AlgorithmSpec, ...] = ("basic-rl", "ramdp", "spibb", "optidice")
    alpha_rule: str | float = "inverse_n"
    seed: int = 0
    workers: int = 1
    max_steps: int = MAX_STEPS
    n_boot: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "traj_counts", tuple(int(n) for n in self.traj_counts))
        object.__setattr__(self, "algorithms",
                           tuple(AlgorithmSpec.parse(a) for a in self.algorithms))
        if self.n_runs < 1:
            raise ValueError("n_runs must be at least 1")
        if not self.traj_counts or min(self.traj_counts) < 1:
            raise ValueError("traj_counts must be non-empty and positive")
        if not 0.0 <= self.zeta <= 1.0:
            raise ValueError("zeta must lie in [0, 1]")
        if not self.algorithms:
            raise ValueError("at least one algorithm is required")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if isinstance(self.alpha_rule, str):
            if self.alpha_rule != "inverse_n":
                raise ValueError("alpha_rule must be 'inverse_n' or a positive number")
        elif not float(self.alpha_rule) > 0:
            raise ValueError("a fixed alpha_rule must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "BenchmarkConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown benchmark config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["traj_counts"] = list(self.traj_counts)
        out["algorithms"] = [asdict(a) for a in self.algorithms]
        return out

    def alpha_for(self, spec: AlgorithmSpec, n_traj: int) -> float:
        if spec.alpha is not None:
            return float(spec.alpha)
        if self.alpha_rule == "inverse_n":
            return 1.0 / n_traj
        return float(self.alpha_rule)


@dataclass
class RunRecord:
    run_id: int
    traj_count: int
    algorithm: str
    normalized_perf: float
    wall_time: float
    error: str | None = None
    converged: bool = True


@dataclass
class CellSummary:
    algorithm: str
    traj_count: int
    mean: float
    cvar05: float
    ci95_halfwidth_mean: float
    ci95_halfwidth_cvar: float
    n_runs: int
    n_failed: int = 0
    n_unconverged: int = 0


@dataclass
class AggregateReport:
    cells: list[CellSummary] = field(default_factory=list)
    n_failed: int = 0

    def cell(self, algorithm: str, traj_count: int) -> CellSummary:
        for c in self.cells:
            if c.algorithm == algorithm and c.traj_count == traj_count:
                return c
        raise KeyError((algorithm, traj_count))

    def to_dict(self) -> dict:
        return {"cells": [asdict(c) for c in self.cells], "n_failed": self.n_failed}

    def table(self) -> str:
        lines = [f"{'algorithm':<10} {'N':>6} {'mean':>9} {'+-':>7} {'cvar05':>9} {'+-':>7} {'runs':>5}"]
        for c in self.cells:
            lines.append(
                f"{c.algorithm:<10} {c.traj_count:>6d} {c.mean:>9.4f} {c.ci95_halfwidth_mean:>7.4f}"
                f" {c.cvar05:>9.4f} {c.ci95_halfwidth_cvar:>7.4f} {c.n_runs:>5d}"
            )
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# algorithms
# ---------------------------------------------------------------------------

def _run_optidice(dataset: Dataset, template: TabularMdp, pi_b: np.ndarray, alpha: float):
    model = mle_mdp(dataset, template)
    d_ref = stationary_distribution(model, pi_b)
    result = solve_newton_chi2(model, d_ref, SolverConfig(alpha=alpha))
    # the behavior policy is given, so states the solution never visits keep it
    return extract_policy(result.w, d_ref, fallback=pi_b), result.converged


ALGORITHMS: dict[str, Callable] = {
    "basic-rl": lambda data, template, pi_b, spec, alpha: (basic_rl(data, template), True),
    "ramdp": lambda data, template, pi_b, spec, alpha: (ramdp(data, template, spec.kappa), True),
    "spibb": lambda data, template, pi_b, spec, alpha: (spibb(data, template, pi_b, spec.n_wedge), True),
    "optidice": lambda data, template, pi_b, spec, alpha: _run_optidice(data, template, pi_b, alpha),
}


# ---------------------------------------------------------------------------
# harness
# ---------------------------------------------------------------------------

def run_single(run_id: int, config: BenchmarkConfig) -> list[RunRecord]:
    """One benchmark run; randomness derives from ``(config.seed, run_id)`` only."""
    mdp_seq, policy_seq, data_seq = np.random.SeedSequence([config.seed, run_id]).spawn(3)
    mdp, goal = generate_random_mdp(mdp_seq)
    sink = mdp.n_states - 1
    s0 = _start_state(mdp)

    sol, _ = solve_optimal(mdp)
    pi_star = greedy_policy(sol.q)
    v_star = evaluate_policy(mdp, pi_star).v
    v_unif = evaluate_policy(mdp, uniform_policy(mdp.n_states, mdp.n_actions)).v
    pi_b = construct_behavior_policy(mdp, config.zeta, v_star, sol.q, v_unif, seed=policy_seq)
    v_b = evaluate_policy(mdp, pi_b).v[s0]

    records = []
    for n_traj, seq in zip(config.traj_counts, data_seq.spawn(len(config.traj_counts))):
        data = sample_trajectories(mdp, pi_b, n_traj, config.max_steps, terminal_states=[sink],
                                   seed=seq)
        for spec in config.algorithms:
            start = time.perf_counter()
            try:
                pi, converged = ALGORITHMS[spec.name](data, mdp, pi_b, spec,
                                                      config.alpha_for(spec, n_traj))
                v_pi = evaluate_policy(mdp, pi).v[s0]
                perf = normalized_performance(v_pi, v_b, v_star[s0])
                error = None
            except Exception as exc:  # recorded, excluded from aggregates
                logger.warning("run %d N=%d %s failed: %s", run_id, n_traj, spec.name, exc)
                perf, converged, error = float("nan"), False, f"{type(exc).__name__}: {exc}"
            records.append(RunRecord(run_id, n_traj, spec.name, float(perf),
                                     time.perf_counter() - start, error, converged))
    return records


def _run_single_star(args):
    return run_single(*args)


def aggregate(records: Sequence[RunRecord], config: BenchmarkConfig) -> AggregateReport:
    report = AggregateReport()
    for a_idx, spec in enumerate(config.algorithms):
        for n_idx, n_traj in enumerate(config.traj_counts):
            cell = [r for r in records if r.algorithm == spec.name and r.traj_count == n_traj]
            ok = np.array([r.normalized_perf for r in cell if r.error is None])
            failed = sum(r.error is not None for r in cell)
            unconverged = sum((not r.converged) and r.error is None for r in cell)
            report.n_failed += failed
            if len(ok) == 0:
                report.cells.append(CellSummary(spec.name, n_traj, float("nan"), float("nan"),
                                                float("nan"), float("nan"), 0, failed, unconverged))
                continue
            seq_mean, seq_cvar = np.random.SeedSequence([config.seed, a_idx, n_idx, 0xC1]).spawn(2)
            lo, hi = bootstrap_ci(ok, np.mean, seq_mean, config.n_boot)
            clo, chi = bootstrap_ci(ok, cvar, seq_cvar, config.n_boot)
            report.cells.append(CellSummary(
                spec.name, n_traj, float(ok.mean()), cvar(ok),
                (hi - lo) / 2.0, (chi - clo) / 2.0, len(ok), failed, unconverged,
            ))
    return report


def run_benchmark(config: BenchmarkConfig) -> tuple[list[RunRecord], AggregateReport]:
    """All runs, ordered by run id, plus the per-cell summary."""
    tasks = [(run_id, config) for run_id in range(config.n_runs)]
    if config.workers == 1:
        chunks = [run_single(*t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            chunks = list(pool.map(_run_single_star, tasks))
    records = [r for chunk in chunks for r in chunk]
    return records, aggregate(records, config)


def write_runs_csv(records: Sequence[RunRecord], stream: io.TextIOBase,
                   timings: bool = False) -> None:
    """CSV with header ``run_id,traj_count,algorithm,normalized_perf,wall_time_s``.

    Wall times are left blank unless ``timings`` is set, which keeps the file
    byte-identical across repeated runs.
    """
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["run_id", "traj_count", "algorithm", "normalized_perf", "wall_time_s"])
    for r in records:
        writer.writerow([r.run_id, r.traj_count, r.algorithm, repr(r.normalized_perf),
                         f"{r.wall_time:.6f}" if timings else ""])
