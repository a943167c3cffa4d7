"""Model-based offline RL baselines: BasicRL, RaMDP and Pi_b-SPIBB."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import Dataset, TabularMdp, check_policy, evaluate_policy, mle_mdp, solve_optimal

__all__ = ["BaselineConfig", "basic_rl", "ramdp", "spibb", "spibb_projection"]


@dataclass(frozen=True)
class BaselineConfig:
    kappa: float = 0.003
    n_wedge: int = 5

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.n_wedge < 1:
            raise ValueError("n_wedge must be at least 1")


def basic_rl(dataset: Dataset, template: TabularMdp) -> np.ndarray:
    """Greedy optimal policy of the MLE MDP."""
    _, pi = solve_optimal(mle_mdp(dataset, template))
    return pi


def ramdp(dataset: Dataset, template: TabularMdp, kappa: float = 0.003) -> np.ndarray:
    """Greedy policy of the MLE MDP with rewards ``R - kappa / sqrt(n)`` on seen pairs."""
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    model = mle_mdp(dataset, template)
    n = dataset.counts_sa
    seen = n > 0
    reward = model.reward.copy()
    reward[seen] -= kappa / np.sqrt(n[seen])
    _, pi = solve_optimal(model.with_reward(reward))
    return pi


def spibb_projection(q: np.ndarray, pi_b: np.ndarray, bootstrapped: np.ndarray) -> np.ndarray:
    """Greedy step within the policies that copy ``pi_b`` on bootstrapped pairs.

    In each state, the baseline mass of non-bootstrapped actions moves to the
    one among them with the highest ``q`` (lowest index on ties).
    """
    pi = np.where(bootstrapped, pi_b, 0.0)
    free = ~bootstrapped
    rows = np.nonzero(free.any(axis=1))[0]
    masked_q = np.where(free[rows], q[rows], -np.inf)
    best = np.argmax(masked_q, axis=1)
    pi[rows, best] += np.sum(np.where(free[rows], pi_b[rows], 0.0), axis=1)
    return pi


def spibb(dataset: Dataset, template: TabularMdp, pi_b: np.ndarray, n_wedge: int = 5,
          max_iter: int = 1000) -> np.ndarray:
    """Pi_b-SPIBB: policy iteration on the MLE MDP with low-count pairs frozen at ``pi_b``."""
    if n_wedge < 1:
        raise ValueError("n_wedge must be at least 1")
    model = mle_mdp(dataset, template)
    pi_b = check_policy(pi_b, model.n_states, model.n_actions)
    bootstrapped = dataset.counts_sa < n_wedge

    pi = pi_b
    sol = evaluate_policy(model, pi)
    for _ in range(max_iter):
        new = spibb_projection(sol.q, pi_b, bootstrapped)
        if np.array_equal(new, pi):
            break
        new_sol = evaluate_policy(model, new)
        # stop on value stagnation so exact ties cannot make the iteration cycle
        if np.all(new_sol.v <= sol.v + 1e-12):
            break
        pi, sol = new, new_sol
    return pi
