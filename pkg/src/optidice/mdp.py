"""Dense tabular MDPs and the dynamic-programming toolkit built on them.

Policies, value tables and stationary distributions are plain numpy arrays:
policies and distributions have shape ``(n_states, n_actions)``, state values
shape ``(n_states,)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

__all__ = [
    "TabularMdp",
    "Dataset",
    "ValueSolution",
    "check_policy",
    "uniform_policy",
    "greedy_policy",
    "solve_optimal",
    "evaluate_policy",
    "state_distribution",
    "stationary_distribution",
    "flow_residual",
    "empirical_distribution",
    "behavior_policy_estimate",
    "mle_mdp",
    "sample_trajectories",
]

_ATOL = 1e-12


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with transition tensor ``transition[s, a, s']``."""

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    discount: float

    def __post_init__(self):
        T = _frozen(self.transition)
        R = _frozen(self.reward)
        p0 = _frozen(self.initial_dist)
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "initial_dist", p0)
        object.__setattr__(self, "discount", float(self.discount))

        if T.ndim != 3 or T.shape[0] != T.shape[2] or T.shape[0] < 1 or T.shape[1] < 1:
            raise ValueError(f"transition must have shape (S, A, S), got {T.shape}")
        if R.shape != T.shape[:2]:
            raise ValueError(f"reward shape {R.shape} does not match {T.shape[:2]}")
        if p0.shape != (T.shape[0],):
            raise ValueError(f"initial_dist shape {p0.shape} does not match S={T.shape[0]}")
        if np.any(T < 0) or np.max(np.abs(T.sum(axis=2) - 1.0)) > _ATOL:
            raise ValueError("transition rows must be probability vectors")
        if np.any(p0 < 0) or abs(p0.sum() - 1.0) > _ATOL:
            raise ValueError("initial_dist must be a probability vector")
        if not np.all(np.isfinite(R)):
            raise ValueError("reward entries must be finite")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError(f"discount must lie in (0, 1], got {self.discount}")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def with_reward(self, reward: np.ndarray) -> "TabularMdp":
        return TabularMdp(self.transition, reward, self.initial_dist, self.discount)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.discount,
            "p0": self.initial_dist.tolist(),
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMdp":
        mdp = cls(
            transition=doc["transition"],
            reward=doc["reward"],
            initial_dist=doc["p0"],
            discount=doc["gamma"],
        )
        if "n_states" in doc and doc["n_states"] != mdp.n_states:
            raise ValueError("n_states disagrees with transition shape")
        if "n_actions" in doc and doc["n_actions"] != mdp.n_actions:
            raise ValueError("n_actions disagrees with transition shape")
        return mdp


class ValueSolution(NamedTuple):
    v: np.ndarray
    q: np.ndarray


@dataclass(frozen=True, eq=False)
class Dataset:
    """Transitions stored column-wise, one row per step.

    ``counts_sa`` and ``counts_sas`` are derived on construction, so the two
    views can never disagree.
    """

    n_states: int
    n_actions: int
    traj_id: np.ndarray
    step: np.ndarray
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    terminal: np.ndarray
    n_trajectories: int = -1
    counts_sa: np.ndarray = field(init=False)
    counts_sas: np.ndarray = field(init=False)
    reward_sum: np.ndarray = field(init=False)

    def __post_init__(self):
        cols = {
            "traj_id": _frozen(self.traj_id, np.int64),
            "step": _frozen(self.step, np.int64),
            "s": _frozen(self.s, np.int64),
            "a": _frozen(self.a, np.int64),
            "r": _frozen(self.r, float),
            "s_next": _frozen(self.s_next, np.int64),
            "terminal": _frozen(self.terminal, bool),
        }
        n = len(cols["s"])
        for name, col in cols.items():
            if col.shape != (n,):
                raise ValueError(f"column {name} has shape {col.shape}, expected ({n},)")
            object.__setattr__(self, name, col)
        S, A = self.n_states, self.n_actions
        if n and (cols["s"].min() < 0 or cols["s"].max() >= S
                  or cols["s_next"].min() < 0 or cols["s_next"].max() >= S
                  or cols["a"].min() < 0 or cols["a"].max() >= A):
            raise ValueError("state or action index out of range")
        if self.n_trajectories < 0:
            n_traj = len(np.unique(cols["traj_id"]))
            object.__setattr__(self, "n_trajectories", n_traj)

        sas = np.zeros(S * A * S, dtype=np.int64)
        np.add.at(sas, (cols["s"] * A + cols["a"]) * S + cols["s_next"], 1)
        sas = sas.reshape(S, A, S)
        rsum = np.zeros(S * A)
        np.add.at(rsum, cols["s"] * A + cols["a"], cols["r"])
        for name, val in (("counts_sas", sas), ("counts_sa", sas.sum(axis=2)),
                          ("reward_sum", rsum.reshape(S, A))):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    def __len__(self) -> int:
        return len(self.s)

    @property
    def trajectories(self) -> list[list[tuple[int, int, float, int, bool]]]:
        out: dict[int, list] = {}
        for i in np.lexsort((self.step, self.traj_id)):
            out.setdefault(int(self.traj_id[i]), []).append(
                (int(self.s[i]), int(self.a[i]), float(self.r[i]),
                 int(self.s_next[i]), bool(self.terminal[i]))
            )
        return list(out.values())

    @classmethod
    def from_trajectories(cls, trajectories: Iterable[Iterable[tuple]],
                          n_states: int, n_actions: int) -> "Dataset":
        rows = []
        n_traj = 0
        for i, traj in enumerate(trajectories):
            n_traj += 1
            for t, (s, a, r, s2, done) in enumerate(traj):
                rows.append((i, t, s, a, r, s2, done))
        cols = list(zip(*rows)) if rows else [()] * 7
        return cls(n_states, n_actions, *cols, n_trajectories=n_traj)

    @classmethod
    def empty(cls, n_states: int, n_actions: int) -> "Dataset":
        return cls.from_trajectories([], n_states, n_actions)


def check_policy(pi: np.ndarray, n_states: int, n_actions: int) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (n_states, n_actions):
        raise ValueError(f"policy shape {pi.shape}, expected {(n_states, n_actions)}")
    if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > _ATOL:
        raise ValueError("policy rows must be probability vectors")
    return pi


def uniform_policy(n_states: int, n_actions: int) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Deterministic greedy policy; ties go to the lowest action index."""
    pi = np.zeros_like(q, dtype=float)
    pi[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
    return pi


def _require_discounted(mdp: TabularMdp, what: str) -> None:
    if mdp.discount >= 1.0:
        raise ValueError(f"{what} requires discount < 1, got {mdp.discount}")


def solve_optimal(mdp: TabularMdp, tol: float = 1e-10,
                  max_iter: int = 1_000_000) -> tuple[ValueSolution, np.ndarray]:
    """Value iteration until the Bellman residual of ``q`` is at most ``tol``."""
    _require_discounted(mdp, "solve_optimal")
    if tol <= 0:
        raise ValueError("tol must be positive")
    T, R, gamma = mdp.transition, mdp.reward, mdp.discount
    q = R.copy()
    for _ in range(max_iter):
        q_next = R + gamma * (T @ q.max(axis=1))
        # residual(q_next) <= gamma * ||q_next - q||
        if gamma * np.max(np.abs(q_next - q)) <= tol:
            q = q_next
            break
        q = q_next
    else:
        raise RuntimeError("value iteration did not converge")
    return ValueSolution(q.max(axis=1), q), greedy_policy(q)


def evaluate_policy(mdp: TabularMdp, pi: np.ndarray, tol: float = 1e-10) -> ValueSolution:
    """Exact policy evaluation by a dense linear solve.

    ``tol`` is accepted for interface symmetry with :func:`solve_optimal`; the
    direct solve is accurate to machine precision for the sizes used here.
    """
    _require_discounted(mdp, "evaluate_policy")
    pi = check_policy(pi, mdp.n_states, mdp.n_actions)
    T, R, gamma = mdp.transition, mdp.reward, mdp.discount
    p_pi = np.einsum("sa,sat->st", pi, T)
    r_pi = np.einsum("sa,sa->s", pi, R)
    v = np.linalg.solve(np.eye(mdp.n_states) - gamma * p_pi, r_pi)
    return ValueSolution(v, R + gamma * (T @ v))


def state_distribution(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    """Normalized discounted state occupancy ``mu = (1-g) p0 + g P_pi^T mu``."""
    _require_discounted(mdp, "stationary_distribution")
    pi = check_policy(pi, mdp.n_states, mdp.n_actions)
    gamma = mdp.discount
    p_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    mu = np.linalg.solve(np.eye(mdp.n_states) - gamma * p_pi.T,
                         (1.0 - gamma) * mdp.initial_dist)
    return np.clip(mu, 0.0, None)


def stationary_distribution(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    """Discounted state-action occupancy ``d(s, a) = mu(s) pi(a|s)``."""
    mu = state_distribution(mdp, pi)
    d = mu[:, None] * np.asarray(pi, dtype=float)
    return d / d.sum()


def flow_residual(mdp: TabularMdp, d: np.ndarray) -> np.ndarray:
    """Per-state Bellman-flow violation ``(1-g) p0 + g T_* d - B_* d``."""
    inflow = np.einsum("sa,sat->t", d, mdp.transition)
    return (1.0 - mdp.discount) * mdp.initial_dist + mdp.discount * inflow - d.sum(axis=1)


def empirical_distribution(dataset: Dataset, absorbing: Iterable[int] = ()) -> np.ndarray:
    """Normalized visitation counts ``n(s, a) / |D|``.

    States listed in ``absorbing`` receive one visit, spread evenly over actions,
    for every terminal transition entering them. Without that padding an
    absorbing state reached only by terminal steps has no support, and no
    correction of the counts could route flow into it.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    counts = dataset.counts_sa.astype(float)
    for g in absorbing:
        hits = np.count_nonzero(dataset.terminal & (dataset.s_next == g))
        counts[g] += hits / dataset.n_actions
    return counts / counts.sum()


def behavior_policy_estimate(dataset: Dataset) -> np.ndarray:
    """Count-based behavior policy; unvisited states get the uniform row."""
    counts = dataset.counts_sa.astype(float)
    totals = counts.sum(axis=1, keepdims=True)
    pi = np.full(counts.shape, 1.0 / dataset.n_actions)
    seen = totals[:, 0] > 0
    pi[seen] = counts[seen] / totals[seen]
    return pi


def mle_mdp(dataset: Dataset, template: TabularMdp) -> TabularMdp:
    """Maximum-likelihood model; unseen pairs become zero-reward self-loops."""
    if len(dataset) == 0:
        raise ValueError("cannot build an MLE MDP from an empty dataset")
    S, A = template.n_states, template.n_actions
    if (dataset.n_states, dataset.n_actions) != (S, A):
        raise ValueError("dataset and template disagree on the state/action spaces")
    n_sa = dataset.counts_sa
    seen = n_sa > 0
    T = np.zeros((S, A, S))
    T[seen] = dataset.counts_sas[seen] / n_sa[seen][:, None]
    ss, aa = np.nonzero(~seen)
    T[ss, aa, ss] = 1.0
    R = np.zeros((S, A))
    R[seen] = dataset.reward_sum[seen] / n_sa[seen]
    return TabularMdp(T, R, template.initial_dist, template.discount)


def _categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One draw per row of ``probs`` by inverse-CDF sampling."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(probs)) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def sample_trajectories(mdp: TabularMdp, pi: np.ndarray, n_traj: int, max_steps: int,
                        terminal_states: Iterable[int] = (), seed: int | np.random.SeedSequence = 0
                        ) -> Dataset:
    """Roll out ``n_traj`` episodes in lock-step.

    An episode stops after a transition into a terminal state or after
    ``max_steps`` transitions. Output depends only on the arguments.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    if n_traj < 0:
        raise ValueError("n_traj must be non-negative")
    pi = check_policy(pi, mdp.n_states, mdp.n_actions)
    S, A = mdp.n_states, mdp.n_actions
    if n_traj == 0:
        return Dataset.empty(S, A)

    rng = np.random.default_rng(seed)
    is_terminal = np.zeros(S, dtype=bool)
    is_terminal[list(terminal_states)] = True
    T, R = mdp.transition, mdp.reward

    state = _categorical(rng, np.broadcast_to(mdp.initial_dist, (n_traj, S)))
    alive = np.arange(n_traj)
    chunks = []
    for t in range(max_steps):
        s = state[alive]
        a = _categorical(rng, pi[s])
        s2 = _categorical(rng, T[s, a])
        done = is_terminal[s2]
        chunks.append((alive, np.full(len(alive), t), s, a, R[s, a], s2, done))
        state[alive] = s2
        alive = alive[~done]
        if len(alive) == 0:
            break

    cols = [np.concatenate(c) for c in zip(*chunks)]
    order = np.lexsort((cols[1], cols[0]))
    cols = [c[order] for c in cols]
    return Dataset(S, A, *cols, n_trajectories=n_traj)
