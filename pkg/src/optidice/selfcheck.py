"""Embedded numerical property checks for the solver stack.

Each family runs on small random MDPs and returns a ``CheckResult``. The
gradient routine under test is a parameter so a deliberately broken one can
be fed in to confirm the check notices.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .divergence import KINDS, FDivergence
from .mdp import TabularMdp, flow_residual, stationary_distribution
from .solver import (
    DualVariables,
    SolverConfig,
    dual_objective,
    grad_hess_chi2,
    jensen_upper_bound,
    primal_value,
    solve_newton_chi2,
)

__all__ = [
    "CheckResult",
    "random_mdp",
    "random_reference",
    "check_gradient",
    "check_duality",
    "check_jensen",
    "check_conjugacy",
    "check_convexity",
    "run_selfcheck",
    "FAMILIES",
]


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: worst={self.worst:.3e} tol={self.tolerance:.1e} {self.detail}".rstrip()


def random_mdp(rng: np.random.Generator, n_states: int = 10, n_actions: int = 3,
               discount: float = 0.95, deterministic: bool = False) -> TabularMdp:
    """Dense random MDP: Dirichlet(1) rows, U(0,1) rewards, Dirichlet start."""
    if deterministic:
        nxt = rng.integers(n_states, size=(n_states, n_actions))
        T = np.zeros((n_states, n_actions, n_states))
        np.put_along_axis(T, nxt[:, :, None], 1.0, axis=2)
    else:
        T = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.uniform(size=(n_states, n_actions))
    p0 = rng.dirichlet(np.ones(n_states))
    return TabularMdp(T, R, p0, discount)


def random_reference(rng: np.random.Generator, mdp: TabularMdp) -> np.ndarray:
    """Occupancy of a random stochastic policy; full support."""
    pi = rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states)
    return stationary_distribution(mdp, pi)


GradHess = Callable[..., tuple[np.ndarray, np.ndarray]]


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


def check_gradient(rng: np.random.Generator, grad_hess: GradHess = grad_hess_chi2,
                   n_mdps: int = 5, n_points: int = 20, h: float = 1e-6) -> CheckResult:
    """Central differences of the chi2 dual against ``grad_hess``.

    Points within 1e-4 of a kink (``e/alpha = -1``), or close enough for the
    stencil to cross one, are redrawn since the objective is only piecewise
    quadratic there.
    """
    worst_g = worst_h = 0.0
    used = 0
    for _ in range(n_mdps):
        mdp = random_mdp(rng, n_states=int(rng.integers(2, 9)), n_actions=int(rng.integers(1, 4)))
        d_ref = random_reference(rng, mdp)
        for _ in range(n_points):
            for _ in range(1000):
                alpha = float(10 ** rng.uniform(-2, 1))
                norm = bool(rng.integers(2))
                nu = rng.normal(size=mdp.n_states)
                lam = float(rng.normal()) if norm else 0.0
                e = mdp.reward + mdp.discount * (mdp.transition @ nu) - nu[:, None] - lam
                margin = max(1e-4, 10 * h * (2 + mdp.discount) / alpha)
                if np.min(np.abs(e / alpha + 1.0)) >= margin:
                    break
            else:
                continue
            used += 1
            cfg = SolverConfig(alpha=alpha, normalization=norm)
            g, H = grad_hess(mdp, d_ref, nu, lam, alpha, norm)
            x = np.append(nu, lam) if norm else nu

            def value(z):
                return dual_objective(mdp, d_ref, DualVariables(z[: mdp.n_states],
                                                                z[-1] if norm else 0.0), cfg)

            def grad_at(z):
                return grad_hess(mdp, d_ref, z[: mdp.n_states], z[-1] if norm else 0.0,
                                 alpha, norm)[0]

            eye = np.eye(len(x))
            g_fd = np.array([(value(x + h * u) - value(x - h * u)) / (2 * h) for u in eye])
            h_fd = np.array([(grad_at(x + h * u)[i] - grad_at(x - h * u)[i]) / (2 * h)
                             for i, u in enumerate(eye)])
            worst_g = max(worst_g, _rel_err(g, g_fd))
            worst_h = max(worst_h, _rel_err(np.diag(H), h_fd))
    passed = worst_g <= 1e-6 and worst_h <= 1e-4 and used == n_mdps * n_points
    return CheckResult("gradient", passed, worst_g, 1e-6,
                       f"hess_diag={worst_h:.3e} (tol 1e-4) points={used}")


def check_duality(rng: np.random.Generator, n_mdps: int = 20,
                  alphas=(0.01, 1.0)) -> CheckResult:
    """Newton optimum: dual value equals the primal value of ``d_ref * w``, which is flow-feasible."""
    worst_gap = worst_flow = 0.0
    unconverged = 0
    for _ in range(n_mdps):
        mdp = random_mdp(rng)
        d_ref = random_reference(rng, mdp)
        for alpha in alphas:
            cfg = SolverConfig(alpha=alpha)
            res = solve_newton_chi2(mdp, d_ref, cfg)
            unconverged += not res.converged
            gap = abs(res.objective - primal_value(mdp, d_ref, res.w, cfg))
            flow = float(np.max(np.abs(flow_residual(mdp, d_ref * res.w))))
            worst_gap, worst_flow = max(worst_gap, gap), max(worst_flow, flow)
    passed = worst_gap <= 1e-6 and worst_flow <= 1e-6 and unconverged == 0
    return CheckResult("duality", passed, worst_gap, 1e-6,
                       f"flow={worst_flow:.3e} unconverged={unconverged}")


def check_jensen(rng: np.random.Generator, n_mdps: int = 20) -> CheckResult:
    """Single-sample bound is above the exact dual, and tight on deterministic MDPs.

    ``alpha`` stays at 0.5 or above: with KL and small ``alpha`` the weights
    reach ``exp(40)`` and the objective itself exceeds 1e7, where an absolute
    1e-10 agreement is below one unit in the last place.
    """
    worst_violation = worst_det = 0.0
    for i in range(n_mdps):
        for deterministic in (False, True):
            mdp = random_mdp(rng, deterministic=deterministic)
            d_ref = random_reference(rng, mdp)
            kind = KINDS[i % len(KINDS)]
            cfg = SolverConfig(alpha=float(10 ** rng.uniform(np.log10(0.5), 1)), divergence=kind,
                               normalization=bool(i % 2))
            duals = DualVariables(rng.normal(size=mdp.n_states), rng.normal())
            exact, upper = jensen_upper_bound(mdp, d_ref, duals, cfg)
            if deterministic:
                worst_det = max(worst_det, abs(upper - exact))
            else:
                worst_violation = max(worst_violation, exact - upper)
    passed = worst_violation <= 1e-12 and worst_det <= 1e-10
    return CheckResult("jensen", passed, worst_det, 1e-10,
                       f"stochastic_violation={worst_violation:.3e}")


def _search_max(div: FDivergence, e: float, alpha: float) -> float:
    """Best ``w e - alpha f(w)`` over ``w >= 0`` by grid then bounded scalar search."""

    def neg(w):
        return -(w * e - alpha * float(div.f(w)))

    grid = np.concatenate([[0.0], np.logspace(-12, 6, 4000)])
    vals = -(grid * e - alpha * div.f(grid))
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    best = -vals[i]
    if hi > lo:
        res = minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-14 * max(1.0, hi)})
        best = max(best, -float(res.fun))
    return best


def check_conjugacy(rng: np.random.Generator, n_samples: int = 200) -> CheckResult:
    """Closed-form correction is never beaten by numerical maximization."""
    worst = -np.inf
    for kind in KINDS:
        div = FDivergence(kind)
        for _ in range(n_samples):
            alpha = float(10 ** rng.uniform(-2, 2))
            e = float(rng.uniform(-10, 10)) * alpha
            w = float(div.correction(e, alpha))
            closed = w * e - alpha * float(div.f(w))
            worst = max(worst, _search_max(div, e, alpha) - closed)
    return CheckResult("conjugacy", worst <= 1e-8, worst, 1e-8,
                       f"samples={n_samples * len(KINDS)}")


def check_convexity(rng: np.random.Generator, n_pairs: int = 1000) -> CheckResult:
    """Midpoint inequality for the dual objective, every divergence."""
    worst = -np.inf
    mdps = [random_mdp(rng, n_states=int(rng.integers(2, 8))) for _ in range(10)]
    refs = [random_reference(rng, m) for m in mdps]
    for i in range(n_pairs):
        mdp, d_ref = mdps[i % len(mdps)], refs[i % len(mdps)]
        cfg = SolverConfig(alpha=float(10 ** rng.uniform(-1, 1)), divergence=KINDS[i % len(KINDS)],
                           normalization=bool(rng.integers(2)))
        a = DualVariables(rng.normal(size=mdp.n_states), rng.normal())
        b = DualVariables(rng.normal(size=mdp.n_states), rng.normal())
        mid = DualVariables(0.5 * (a.nu + b.nu), 0.5 * (a.lam + b.lam))
        lhs = dual_objective(mdp, d_ref, mid, cfg)
        rhs = 0.5 * (dual_objective(mdp, d_ref, a, cfg) + dual_objective(mdp, d_ref, b, cfg))
        worst = max(worst, lhs - rhs)
    return CheckResult("convexity", worst <= 1e-10, worst, 1e-10, f"pairs={n_pairs}")


FAMILIES = ("gradient", "duality", "jensen", "conjugacy", "convexity")


def run_selfcheck(seed: int = 0, grad_hess: GradHess = grad_hess_chi2,
                  families=FAMILIES) -> list[CheckResult]:
    seqs = dict(zip(FAMILIES, np.random.SeedSequence(seed).spawn(len(FAMILIES))))
    runners = {
        "gradient": lambda rng: check_gradient(rng, grad_hess),
        "duality": check_duality,
        "jensen": check_jensen,
        "conjugacy": check_conjugacy,
        "convexity": check_convexity,
    }
    results = []
    for name in families:
        if name not in runners:
            raise ValueError(f"unknown check family {name!r}")
        results.append(runners[name](np.random.default_rng(seqs[name])))
    return results
