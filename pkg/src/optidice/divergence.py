"""f-divergence generators and the advantage-to-correction map.

Three generators are supported, each with ``f(1) = 0``:

* ``chi2``:      f(x) = (x - 1)^2 / 2
* ``kl``:        f(x) = x log x
* ``soft-chi2``: x log x - x + 1 below 1, (x - 1)^2 / 2 from 1 on

All functions broadcast over numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FDivergence",
    "get_divergence",
    "f_value",
    "correction_from_advantage",
    "h_value",
    "KINDS",
    "CHI2",
    "KL",
    "SOFT_CHI2",
]

KINDS = ("chi2", "kl", "soft-chi2")

# exp() argument cap for the KL inverse derivative
_KL_EXP_CAP = 50.0


def _xlogx(x: np.ndarray) -> np.ndarray:
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, x * np.log(safe), 0.0)


@dataclass(frozen=True)
class FDivergence:
    kind: str

    def __post_init__(self):
        kind = self.kind.replace("_", "-")
        if kind not in KINDS:
            raise ValueError(f"unknown divergence {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)

    def f(self, x):
        """Generator value; ``f(0)`` is the right limit."""
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise ValueError("f-divergence generator is defined for x >= 0 only")
        if self.kind == "chi2":
            out = 0.5 * (x - 1.0) ** 2
        elif self.kind == "kl":
            out = _xlogx(x)
        else:
            out = np.where(x < 1.0, _xlogx(x) - x + 1.0, 0.5 * (x - 1.0) ** 2)
        return out[()] if out.ndim == 0 else out

    def f_prime(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "chi2":
            out = x - 1.0
        elif self.kind == "kl":
            with np.errstate(divide="ignore"):
                out = np.log(x) + 1.0
        else:
            with np.errstate(divide="ignore"):
                out = np.where(x < 1.0, np.log(np.where(x > 0, x, 0.0)), x - 1.0)
        return out[()] if out.ndim == 0 else out

    def f_prime_inv(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "chi2":
            out = y + 1.0
        elif self.kind == "kl":
            out = np.exp(np.minimum(y - 1.0, _KL_EXP_CAP))
        else:
            out = np.where(y < 0.0, np.exp(np.minimum(y, 0.0)), y + 1.0)
        return out[()] if out.ndim == 0 else out

    def f_prime_inv_deriv(self, y):
        """Derivative of ``max(0, (f')^{-1}(y))`` (right derivative at kinks)."""
        y = np.asarray(y, dtype=float)
        if self.kind == "chi2":
            out = (y >= -1.0).astype(float)
        elif self.kind == "kl":
            out = np.where(y - 1.0 < _KL_EXP_CAP, np.exp(np.minimum(y - 1.0, _KL_EXP_CAP)), 0.0)
        else:
            out = np.where(y < 0.0, np.exp(np.minimum(y, 0.0)), 1.0)
        return out[()] if out.ndim == 0 else out

    def correction(self, e, alpha: float):
        """Closed-form maximizer of ``w * e - alpha * f(w)`` over ``w >= 0``."""
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        return np.maximum(0.0, self.f_prime_inv(np.asarray(e, dtype=float) / alpha))

    def h(self, x):
        """``-f(w) + w x`` at ``w = max(0, (f')^{-1}(x))``: the conjugate of f on w >= 0."""
        w = np.maximum(0.0, self.f_prime_inv(x))
        return -self.f(w) + w * np.asarray(x, dtype=float)


CHI2 = FDivergence("chi2")
KL = FDivergence("kl")
SOFT_CHI2 = FDivergence("soft-chi2")


def get_divergence(name: str | FDivergence) -> FDivergence:
    if isinstance(name, FDivergence):
        return name
    return FDivergence(name)


def f_value(div: FDivergence, x):
    return div.f(x)


def correction_from_advantage(div: FDivergence, e, alpha: float):
    return div.correction(e, alpha)


def h_value(div: FDivergence, x):
    return div.h(x)
