"""L1-penalized logistic regression and one-vs-rest class probabilities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import make_folds
from ._kernels import logit_prox_grad
from .basis import expand_basis
from .linear import _check_x, _raw_dim


def sigmoid(u):
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logit_objective(q, d, lam, coefficients, intercept) -> float:
    eta = intercept + q @ coefficients
    return float(np.mean(np.logaddexp(0.0, eta) - d * eta) + lam * np.abs(coefficients).sum())


@dataclass(frozen=True)
class LogisticFit:
    coefficients: np.ndarray
    intercept: float
    lam: float
    lambda_grid: np.ndarray
    cv_deviance: np.ndarray | None
    converged: bool
    n_iter: int
    basis: str = "linear"

    kind = "logit_lasso"

    @property
    def p(self) -> int:
        return _raw_dim(self.coefficients.shape[0], self.basis)

    def decision_function(self, x) -> np.ndarray:
        q = expand_basis(_check_x(x, self.p), self.basis)
        return self.intercept + q @ self.coefficients

    def predict(self, x) -> np.ndarray:
        return sigmoid(self.decision_function(x))


@dataclass
class _Solver:
    """Warm-started proximal-gradient solves along a decreasing penalty path."""

    q: np.ndarray
    d: np.ndarray
    tol: float = 1e-7
    max_iter: int = 5000
    beta: np.ndarray = field(init=False)
    intercept: float = field(init=False)
    step_l: float = field(init=False)

    def __post_init__(self):
        m, p = self.q.shape
        self.q = np.ascontiguousarray(self.q)
        self.d = np.asarray(self.d, dtype=float)
        self.beta = np.zeros(p)
        dbar = float(np.clip(self.d.mean(), 1e-10, 1 - 1e-10))
        self.intercept = float(np.log(dbar / (1.0 - dbar)))
        # the logistic loss gradient is Lipschitz with constant ||[1 q]||^2 / (4M)
        col = np.sqrt((self.q ** 2).sum(axis=0).max() + 1.0) if p else 1.0
        self.step_l = max(col * col / (4.0 * m) / 16.0, 1e-8)

    def solve(self, lam: float, trace=None):
        trace = np.empty(0) if trace is None else trace
        beta, a, it, ok, step = logit_prox_grad(self.q, self.d, lam, self.beta, self.intercept,
                                                self.step_l, self.max_iter, self.tol, trace)
        # let the next solve probe a longer step; backtracking restores L if needed
        self.beta, self.intercept, self.step_l = beta, float(a), max(step / 2.0, 1e-8)
        return beta.copy(), float(a), int(it), bool(ok)


def lambda_max(q, d) -> float:
    """Smallest penalty at which every penalized coefficient is zero."""
    d = np.asarray(d, dtype=float)
    return float(np.max(np.abs(q.T @ (d - d.mean())) / q.shape[0])) if q.shape[1] else 0.0


def default_lambda_grid(q, d, n_lambda: int = 50, min_ratio: float = 1e-4) -> np.ndarray:
    lmax = lambda_max(q, d)
    if lmax <= 0:
        lmax = 1e-8
    return np.geomspace(lmax, lmax * min_ratio, n_lambda)


def _deviance(q, d, beta, a) -> float:
    eta = a + q @ beta
    return float(2.0 * np.mean(np.logaddexp(0.0, eta) - d * eta))


def solve_logit_lasso(q, d, lam: float, *, tol: float = 1e-7, max_iter: int = 5000,
                      trace=None):
    """Single penalized fit; returns (coefficients, intercept, iterations, converged)."""
    solver = _Solver(np.asarray(q, dtype=float), d, tol, max_iter)
    return solver.solve(lam, trace)


def fit_logit_lasso(q, d, lambda_grid=None, cv_folds: int = 10, *, seed: int = 0,
                    n_lambda: int = 50, min_ratio: float = 1e-4, tol: float = 1e-7,
                    cv_tol: float = 1e-4, max_iter: int = 5000,
                    basis: str = "linear") -> LogisticFit:
    """Logit lasso with the penalty level chosen by K-fold cross-validated deviance.

    Each candidate penalty is solved by proximal gradient, warm-started from
    the previous (larger) penalty. The selected penalty minimizes the mean
    held-out deviance; ties go to the larger penalty. The model is then
    refit on all rows at that penalty.

    Solves are stopped once the proximal-gradient mapping falls below
    ``cv_tol`` on the cross-validation paths and ``tol`` on the final refit.
    """
    q = expand_basis(np.asarray(q, dtype=float), basis)
    d = np.asarray(d, dtype=float)
    m = q.shape[0]
    if d.shape != (m,):
        raise ValueError(f"labels have shape {d.shape}, expected ({m},)")
    if not np.all((d == 0) | (d == 1)):
        raise ValueError("labels must be binary")
    if d.min() == d.max():
        raise ValueError("both classes must be present to fit a propensity model")
    if lambda_grid is None:
        grid = default_lambda_grid(q, d, n_lambda, min_ratio)
    else:
        grid = np.sort(np.asarray(lambda_grid, dtype=float))[::-1]
        if grid.size == 0:
            raise ValueError("empty penalty grid")
        if np.any(grid < 0):
            raise ValueError("penalties must be non-negative")

    cv_dev = None
    if grid.size == 1:
        chosen = 0
    else:
        if cv_folds < 2 or cv_folds > m:
            raise ValueError(f"cv_folds={cv_folds} invalid for {m} rows")
        plan = make_folds(m, cv_folds, seed)
        cv_dev = np.zeros(grid.size)
        counts = np.zeros(grid.size)
        for k in range(cv_folds):
            tr, te = plan.complement(k), plan.fold(k)
            if d[tr].min() == d[tr].max():
                continue
            solver = _Solver(q[tr], d[tr], cv_tol, max_iter)
            for i, lam in enumerate(grid):
                beta, a, _, _ = solver.solve(lam)
                cv_dev[i] += _deviance(q[te], d[te], beta, a) * te.size
                counts[i] += te.size
        if not counts.any():
            raise ValueError("every cross-validation training fold has a single class")
        cv_dev /= counts
        chosen = int(np.argmin(cv_dev))  # first minimum = largest penalty among ties

    solver = _Solver(q, d, tol, max_iter)
    for lam in grid[: chosen + 1]:
        beta, a, it, ok = solver.solve(lam)
    return LogisticFit(beta, a, float(grid[chosen]), grid, cv_dev, ok, it, basis)


@dataclass(frozen=True)
class MulticlassFit:
    """One-vs-rest logit lasso models renormalized to sum to one."""

    classes: np.ndarray
    fits: tuple[LogisticFit, ...]

    kind = "multiclass"

    @property
    def p(self) -> int:
        return self.fits[0].p

    def predict_proba(self, x) -> np.ndarray:
        raw = np.column_stack([f.predict(x) for f in self.fits])
        return raw / raw.sum(axis=1, keepdims=True)

    def predict(self, x, level: int | None = None) -> np.ndarray:
        probs = self.predict_proba(x)
        if level is None:
            return probs
        return probs[:, self.column(level)]

    def column(self, level: int) -> int:
        hits = np.flatnonzero(self.classes == level)
        if hits.size == 0:
            raise KeyError(f"level {level} not among fitted classes {self.classes.tolist()}")
        return int(hits[0])


def fit_multiclass_propensity(x, w, spec=None) -> MulticlassFit:
    """Class probabilities P(W = j | X) from one binary logit lasso per level.

    ``spec`` is a ``LearnerSpec`` of kind ``logit_lasso`` (or None for
    defaults); every level in ``0..max(w)`` must occur in ``w``.
    """
    from .spec import LearnerSpec

    spec = spec or LearnerSpec("logit_lasso")
    w = np.asarray(w)
    top = int(w.max())
    classes = np.arange(top + 1)
    absent = [int(c) for c in classes if not np.any(w == c)]
    if absent:
        raise ValueError(f"levels {absent} are absent from the training sample")
    opts = spec.logit_options()
    fits = tuple(
        fit_logit_lasso(x, (w == c).astype(float), seed=spec.seed, **opts) for c in classes
    )
    return MulticlassFit(classes, fits)
