"""Weighted-L1 least squares with data-driven penalty loadings."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ._kernels import lasso_cd
from .basis import expand_basis


class DegenerateResponseError(ValueError):
    pass


@dataclass(frozen=True)
class LinearFit:
    coefficients: np.ndarray
    intercept: float
    lam: float
    loadings: np.ndarray
    n_iter: int
    converged: bool
    basis: str = "linear"

    kind = "lasso"

    @property
    def p(self) -> int:
        return _raw_dim(self.coefficients.shape[0], self.basis)

    def predict(self, x) -> np.ndarray:
        q = expand_basis(_check_x(x, self.p), self.basis)
        return self.intercept + q @ self.coefficients


def _raw_dim(n_coef: int, basis: str) -> int:
    return n_coef // 2 if basis == "quadratic" else n_coef


def _check_x(x, p: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != p:
        raise ValueError(f"expected {p} covariates, got {x.shape[1]}")
    return x


def fit_lasso(q, y, lam: float, loadings=None, *, tol: float = 1e-8,
              max_sweeps: int = 10_000, basis: str = "linear") -> LinearFit:
    """Minimize (1/M) sum (y_i - a - q_i'b)^2 + (lam/M) sum_j loadings_j |b_j|.

    The intercept ``a`` is unpenalized. Solved by cyclic coordinate descent,
    stopping when no coefficient moves by more than ``tol`` in a sweep.
    """
    q = expand_basis(np.asarray(q, dtype=float), basis)
    y = np.asarray(y, dtype=float)
    m, p = q.shape
    if y.shape != (m,):
        raise ValueError(f"response has shape {y.shape}, expected ({m},)")
    if lam < 0:
        raise ValueError("penalty level must be non-negative")
    loadings = np.ones(p) if loadings is None else np.asarray(loadings, dtype=float)
    if loadings.shape != (p,) or np.any(loadings < 0):
        raise ValueError("loadings must be a non-negative vector with one entry per column")
    pen = lam * loadings / (2.0 * m)
    beta, a, sweeps, ok = lasso_cd(np.asfortranarray(q), y, pen, np.zeros(p), float(y.mean()),
                                   True, tol, max_sweeps)
    return LinearFit(beta, float(a), float(lam), loadings.copy(), int(sweeps), bool(ok), basis)


def default_gamma(p: int, m: int) -> float:
    return 0.1 / math.log(max(p, m))


def penalty_level(m: int, p: int, c: float, gamma: float) -> float:
    return 2.0 * c * math.sqrt(m) * norm.ppf(1.0 - gamma / (2.0 * p))


def compute_penalty_loadings(q, y, c: float = 1.1, gamma: float | None = None,
                             b: int = 2, basis: str = "linear"):
    """Penalty level and per-coefficient loadings for the heteroskedastic lasso.

    Starts from loadings sqrt(mean(q_ij^2 (y_i - ybar)^2)) and then, ``b``
    times, refits the lasso and recomputes the loadings from its residuals.
    Returns ``(lam, loadings)``.
    """
    q = expand_basis(np.asarray(q, dtype=float), basis)
    y = np.asarray(y, dtype=float)
    if q.ndim != 2 or q.shape[0] < 2:
        raise ValueError("need at least two observations")
    if not np.all(np.isfinite(q)):
        raise ValueError("covariates must be finite")
    if c <= 1:
        raise ValueError("c must exceed 1")
    if b < 1:
        raise ValueError("b must be at least 1")
    m, p = q.shape
    if gamma is None:
        gamma = default_gamma(p, m)
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    lam = penalty_level(m, p, c, gamma)
    loadings = _loadings(q, y - y.mean())
    if not np.any(loadings > 0):
        raise DegenerateResponseError("degenerate response: all initial loadings are zero")
    for _ in range(b):
        fit = fit_lasso(q, y, lam, loadings)
        resid = y - fit.intercept - q @ fit.coefficients
        new = _loadings(q, resid)
        if not np.any(new > 0):
            break
        loadings = new
    return lam, loadings


def _loadings(q: np.ndarray, e: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean(q * q * (e * e)[:, None], axis=0))


def fit_lasso_auto(q, y, c: float = 1.1, gamma: float | None = None, b: int = 2,
                   basis: str = "linear") -> LinearFit:
    """Lasso with the plug-in penalty level and refined loadings."""
    q = np.asarray(q, dtype=float)
    lam, loadings = compute_penalty_loadings(q, y, c=c, gamma=gamma, b=b, basis=basis)
    return fit_lasso(q, y, lam, loadings, basis=basis)
