"""Exact tabular OptiDICE.

The dual objective in the state multipliers ``nu`` (and, with the
normalization constraint, the scalar ``lam``)::

    L(nu, lam) = (1 - g) p0.nu + lam * [normalized]
                 + sum_{s,a} d_ref(s,a) [w (e - lam) - alpha f(w)]

with ``e = R + g T nu - nu`` and ``w = max(0, (f')^{-1}((e - lam) / alpha))``.
``L`` is convex; its gradient is the Bellman-flow residual of ``d_ref * w``.

Two minimizers are provided: a semi-smooth Newton method for the chi-square
generator and a quasi-Newton first-order method for any generator.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from .divergence import CHI2, FDivergence, get_divergence
from .mdp import TabularMdp

__all__ = [
    "SolverConfig",
    "DualVariables",
    "SolveResult",
    "UnsupportedDivergence",
    "advantage",
    "dual_objective",
    "dual_gradient",
    "grad_hess_chi2",
    "primal_value",
    "solve_newton_chi2",
    "solve_first_order",
    "solve",
    "extract_policy",
    "jensen_upper_bound",
]

logger = logging.getLogger(__name__)


class UnsupportedDivergence(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    alpha: float = 1.0
    divergence: FDivergence = CHI2
    normalization: bool = False
    tol: float = 1e-9
    max_iter: int = 200
    damping: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "divergence", get_divergence(self.divergence))
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.damping < 0:
            raise ValueError("damping must be non-negative")

    @classmethod
    def from_dict(cls, doc: dict) -> "SolverConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown solver config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "divergence": self.divergence.kind,
            "normalization": self.normalization,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "damping": self.damping,
            "seed": self.seed,
        }


@dataclass
class DualVariables:
    nu: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        self.nu = np.asarray(self.nu, dtype=float)
        self.lam = float(self.lam)
        if not (np.all(np.isfinite(self.nu)) and np.isfinite(self.lam)):
            raise ValueError("dual variables must be finite")


@dataclass
class SolveResult:
    duals: DualVariables
    w: np.ndarray
    policy: np.ndarray
    objective: float
    iterations: int
    grad_norm: float
    converged: bool
    config: SolverConfig = field(default_factory=SolverConfig)
    method: str = ""

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "config": self.config.to_dict(),
            "nu": self.duals.nu.tolist(),
            "lambda": self.duals.lam,
            "w": self.w.tolist(),
            "policy": self.policy.tolist(),
            "objective": self.objective,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "converged": self.converged,
        }


def advantage(mdp: TabularMdp, nu: np.ndarray) -> np.ndarray:
    """``e_nu(s, a) = R(s, a) + g sum_s' T(s'|s,a) nu(s') - nu(s)``."""
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (mdp.n_states,):
        raise ValueError(f"nu has shape {nu.shape}, expected ({mdp.n_states},)")
    return mdp.reward + mdp.discount * (mdp.transition @ nu) - nu[:, None]


def _flow_operator(mdp: TabularMdp, normalization: bool) -> np.ndarray:
    """Jacobian of the flattened shifted advantage w.r.t. ``(nu[, lam])``."""
    S, A = mdp.n_states, mdp.n_actions
    K = mdp.discount * mdp.transition.reshape(S * A, S)
    K[np.arange(S * A), np.repeat(np.arange(S), A)] -= 1.0
    if normalization:
        K = np.hstack([K, -np.ones((S * A, 1))])
    return K


def _linear_term(mdp: TabularMdp, normalization: bool) -> np.ndarray:
    c = (1.0 - mdp.discount) * mdp.initial_dist
    return np.append(c, 1.0) if normalization else c


def _check_d_ref(mdp: TabularMdp, d_ref: np.ndarray) -> np.ndarray:
    d_ref = np.asarray(d_ref, dtype=float)
    if d_ref.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"d_ref has shape {d_ref.shape}, expected "
                         f"{(mdp.n_states, mdp.n_actions)}")
    if np.any(d_ref < 0) or not np.all(np.isfinite(d_ref)):
        raise ValueError("d_ref must be finite and non-negative")
    return d_ref


def _check_gamma(mdp: TabularMdp, config: SolverConfig) -> None:
    if mdp.discount >= 1.0 and not config.normalization:
        raise ValueError("discount = 1 requires the normalization constraint")


class _Problem:
    """Flattened dual problem over ``x = [nu, lam]`` (``lam`` only if normalized)."""

    def __init__(self, mdp: TabularMdp, d_ref: np.ndarray, config: SolverConfig):
        self.mdp = mdp
        self.config = config
        self.d = _check_d_ref(mdp, d_ref).ravel()
        self.K = _flow_operator(mdp, config.normalization)
        self.c = _linear_term(mdp, config.normalization)
        self.r = mdp.reward.ravel()
        self.dim = self.K.shape[1]

    def pack(self, duals: DualVariables) -> np.ndarray:
        return np.append(duals.nu, duals.lam) if self.config.normalization else duals.nu.copy()

    def unpack(self, x: np.ndarray) -> DualVariables:
        if self.config.normalization:
            return DualVariables(x[:-1].copy(), x[-1])
        return DualVariables(x.copy(), 0.0)

    def shifted_advantage(self, x: np.ndarray) -> np.ndarray:
        return self.r + self.K @ x

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        cfg = self.config
        e = self.shifted_advantage(x)
        w = cfg.divergence.correction(e, cfg.alpha)
        value = self.c @ x + self.d @ (w * e - cfg.alpha * cfg.divergence.f(w))
        # envelope theorem: only the explicit dependence on x survives
        grad = self.c + self.K.T @ (self.d * w)
        return float(value), grad, w


def _problem(mdp, d_ref, config) -> _Problem:
    _check_gamma(mdp, config)
    return _Problem(mdp, d_ref, config)


def dual_objective(mdp: TabularMdp, d_ref: np.ndarray, duals: DualVariables,
                   config: SolverConfig) -> float:
    prob = _problem(mdp, d_ref, config)
    return prob.value_and_grad(prob.pack(duals))[0]


def dual_gradient(mdp: TabularMdp, d_ref: np.ndarray, duals: DualVariables,
                  config: SolverConfig) -> np.ndarray:
    """Gradient w.r.t. ``nu`` (with ``d/d lam`` appended when normalized)."""
    prob = _problem(mdp, d_ref, config)
    return prob.value_and_grad(prob.pack(duals))[1]


def primal_value(mdp: TabularMdp, d_ref: np.ndarray, w: np.ndarray,
                 config: SolverConfig) -> float:
    """``E_{d_ref w}[R] - alpha D_f(d_ref w || d_ref)``."""
    d_ref = _check_d_ref(mdp, d_ref)
    w = np.asarray(w, dtype=float)
    div = config.divergence
    return float(np.sum(d_ref * w * mdp.reward) - config.alpha * np.sum(d_ref * div.f(w)))


def grad_hess_chi2(mdp: TabularMdp, d_ref: np.ndarray, nu: np.ndarray, lam: float = 0.0,
                   alpha: float = 1.0, normalization: bool = False
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and generalized Hessian of the chi-square dual objective.

    Built term by term from the masked Jacobian ``J = (g T - B) * m / alpha``::

        g = c - alpha J'D(w - 1) + J'D e + (gT - B)'D w
        H = -alpha J'DJ + J'D(gT - B) + (gT - B)'DJ

    With ``normalization`` the operator gains a ``-1`` column for ``lam`` and
    both outputs gain a trailing row/column.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    d = _check_d_ref(mdp, d_ref).ravel()
    K = _flow_operator(mdp, normalization)
    c = _linear_term(mdp, normalization)
    x = np.append(nu, lam) if normalization else np.asarray(nu, dtype=float)
    e = mdp.reward.ravel() + K @ x
    m = (e / alpha + 1.0 >= 0).astype(float)
    w = (e / alpha + 1.0) * m
    J = K * (m / alpha)[:, None]
    DJ = d[:, None] * J
    DK = d[:, None] * K
    g = c - alpha * DJ.T @ (w - 1.0) + DJ.T @ e + K.T @ (d * w)
    H = -alpha * J.T @ DJ + J.T @ DK + K.T @ DJ
    return g, H


def extract_policy(w: np.ndarray, d_ref: np.ndarray,
                   fallback: np.ndarray | None = None) -> np.ndarray:
    """``pi(a|s) ~ w(s,a) d_ref(s,a)``.

    Rows without mass take the matching row of ``fallback`` (uniform if None).
    """
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("corrections must be non-negative")
    mass = w * np.asarray(d_ref, dtype=float)
    totals = mass.sum(axis=1, keepdims=True)
    if fallback is None:
        pi = np.full(mass.shape, 1.0 / mass.shape[1])
    else:
        pi = np.array(fallback, dtype=float)
    rows = totals[:, 0] > 0
    pi[rows] = mass[rows] / totals[rows]
    return pi


def _result(prob: _Problem, x, d_ref, iterations, method) -> SolveResult:
    value, grad, w = prob.value_and_grad(x)
    if not np.isfinite(value):
        raise FloatingPointError("dual objective is not finite")
    gnorm = float(np.max(np.abs(grad)))
    S, A = prob.mdp.n_states, prob.mdp.n_actions
    w = w.reshape(S, A)
    return SolveResult(
        duals=prob.unpack(x),
        w=w,
        policy=extract_policy(w, d_ref),
        objective=value,
        iterations=iterations,
        grad_norm=gnorm,
        converged=gnorm <= prob.config.tol,
        config=prob.config,
        method=method,
    )


def solve_newton_chi2(mdp: TabularMdp, d_ref: np.ndarray,
                      config: SolverConfig = SolverConfig()) -> SolveResult:
    """Semi-smooth Newton iteration with Armijo backtracking."""
    if config.divergence.kind != "chi2":
        raise UnsupportedDivergence(
            f"Newton solver needs the chi2 divergence, got {config.divergence.kind}")
    prob = _problem(mdp, d_ref, config)
    x = np.zeros(prob.dim)
    eye = np.eye(prob.dim)
    nu_dim = mdp.n_states

    value, grad, _ = prob.value_and_grad(x)
    it = 0
    for it in range(1, config.max_iter + 1):
        if np.max(np.abs(grad)) <= config.tol:
            it -= 1
            break
        _, H = grad_hess_chi2(mdp, d_ref, x[:nu_dim], x[nu_dim] if config.normalization else 0.0,
                              config.alpha, config.normalization)
        try:
            # damping relative to the curvature scale, which shrinks like 1/alpha
            scale = max(float(np.max(np.abs(np.diag(H)))), np.finfo(float).tiny)
            step = -np.linalg.solve(H + config.damping * scale * eye, grad)
        except np.linalg.LinAlgError:
            step = -grad
        slope = grad @ step
        if not (np.all(np.isfinite(step)) and slope < 0):
            step, slope = -grad, -(grad @ grad)

        eta = 1.0
        accepted = False
        # below this predicted decrease, objective comparisons are rounding noise
        resolvable = -slope > 1e-13 * max(1.0, abs(value))
        for _ in range(80 if resolvable else 0):
            x_new = x + eta * step
            v_new, g_new, _ = prob.value_and_grad(x_new)
            if v_new <= value + 1e-4 * eta * slope:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            # take the trial step that most shrinks the gradient
            best = None
            eta = 1.0
            for _ in range(60):
                trial = x + eta * step
                v_t, g_t, _ = prob.value_and_grad(trial)
                gn = np.max(np.abs(g_t))
                if best is None or gn < best[0]:
                    best = (gn, trial, v_t, g_t)
                eta *= 0.5
            if not best[0] < np.max(np.abs(grad)):
                logger.debug("line search stalled at iteration %d", it)
                break
            _, x_new, v_new, g_new = best
        x, value, grad = x_new, v_new, g_new
        if not np.isfinite(value):
            raise FloatingPointError("dual objective is not finite")

    return _result(prob, x, d_ref, it, "newton")


def _lbfgs_direction(grad: np.ndarray, pairs: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    q = grad.copy()
    alphas = []
    for s, y in reversed(pairs):
        a = (s @ q) / (y @ s)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), a in zip(pairs, reversed(alphas)):
        b = (y @ q) / (y @ s)
        q += (a - b) * s
    return -q


def _slope_line_search(prob: _Problem, x: np.ndarray, step: np.ndarray, slope0: float,
                       c: float = 0.5, max_eval: int = 60):
    """Find eta with |phi'(eta)| <= c |phi'(0)| for ``phi(eta) = L(x + eta step)``.

    Only directional derivatives are compared. Along a descent ray of a convex
    function they are monotone, so bisection works even where objective values
    no longer resolve the decrease.
    """
    lo, hi = 0.0, np.inf
    eta = 1.0
    best = None
    for _ in range(max_eval):
        value, grad, _ = prob.value_and_grad(x + eta * step)
        slope = grad @ step
        if np.isfinite(value) and abs(slope) <= c * abs(slope0):
            return eta, value, grad
        if np.isfinite(value) and slope < 0:
            lo = eta
            best = (eta, value, grad)
        else:
            hi = eta
        eta = 2.0 * lo if np.isinf(hi) else 0.5 * (lo + hi)
    if best is None:
        return None
    return best


def solve_first_order(mdp: TabularMdp, d_ref: np.ndarray,
                      config: SolverConfig = SolverConfig()) -> SolveResult:
    """Limited-memory quasi-Newton descent on the exact dual, any divergence.

    KL with very small ``alpha`` starts deep in the capped exponential region
    and may stop unconverged; the result then says so.
    """
    prob = _problem(mdp, d_ref, config)
    x = np.zeros(prob.dim)
    value, grad, _ = prob.value_and_grad(x)
    pairs: list[tuple[np.ndarray, np.ndarray]] = []
    memory = 20
    it = 0
    for it in range(1, config.max_iter + 1):
        if np.max(np.abs(grad)) <= config.tol:
            it -= 1
            break
        step = _lbfgs_direction(grad, pairs)
        slope = grad @ step
        if not (pairs and slope < 0):
            # unit-length steepest descent; the raw gradient can be ~1e20 in the exp regime
            pairs.clear()
            step = -grad / np.max(np.abs(grad))
            slope = grad @ step
        found = _slope_line_search(prob, x, step, slope)
        if found is None:
            if not pairs:
                logger.debug("first-order line search failed at iteration %d", it)
                break
            pairs.clear()
            continue
        eta, v_new, g_new = found
        s_k, y_k = eta * step, g_new - grad
        if s_k @ y_k > 1e-16 * np.linalg.norm(s_k) * np.linalg.norm(y_k):
            pairs.append((s_k, y_k))
            del pairs[:-memory]
        x, value, grad = x + s_k, v_new, g_new
        if not np.isfinite(value):
            raise FloatingPointError("dual objective is not finite")

    return _result(prob, x, d_ref, it, "first-order")


def solve(mdp: TabularMdp, d_ref: np.ndarray, config: SolverConfig = SolverConfig(),
          method: str = "auto") -> SolveResult:
    if method == "auto":
        method = "newton" if config.divergence.kind == "chi2" else "first-order"
    if method == "newton":
        return solve_newton_chi2(mdp, d_ref, config)
    if method == "first-order":
        return solve_first_order(mdp, d_ref, config)
    raise ValueError(f"unknown solver method {method!r}")


def jensen_upper_bound(mdp: TabularMdp, d_ref: np.ndarray, duals: DualVariables,
                       config: SolverConfig) -> tuple[float, float]:
    """Exact dual objective and its single-sample (per next state) upper bound."""
    exact = dual_objective(mdp, d_ref, duals, config)
    d_ref = _check_d_ref(mdp, d_ref)
    nu, lam = duals.nu, duals.lam if config.normalization else 0.0
    alpha, g = config.alpha, mdp.discount
    e_hat = mdp.reward[:, :, None] + g * nu[None, None, :] - nu[:, None, None] - lam
    inner = np.sum(mdp.transition * alpha * config.divergence.h(e_hat / alpha), axis=2)
    upper = (1.0 - g) * (mdp.initial_dist @ nu) + float(np.sum(d_ref * inner))
    if config.normalization:
        upper += lam
    return exact, upper
