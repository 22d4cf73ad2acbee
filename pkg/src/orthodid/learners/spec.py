"""Learner configuration and kind-dispatched fitting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .basis import BASES
from .forest import fit_random_forest
from .kernel import fit_kernel_regression
from .linear import fit_lasso, fit_lasso_auto
from .logistic import fit_logit_lasso, fit_multiclass_propensity

KINDS = ("lasso", "logit_lasso", "kernel", "forest", "oracle")

# accepted hyperparameters per kind, with defaults
DEFAULTS: dict[str, dict[str, Any]] = {
    "lasso": {"c": 1.1, "gamma": None, "b": 2, "lam": None, "basis": "linear"},
    "logit_lasso": {"cv_folds": 10, "n_lambda": 50, "min_ratio": 1e-4, "lambda_grid": None,
                    "tol": 1e-7, "cv_tol": 1e-4, "max_iter": 5000, "basis": "linear"},
    "kernel": {"bandwidth_grid": None, "n_bandwidths": 20, "grid_lo": 0.1, "grid_hi": 3.0},
    "forest": {"n_trees": 500, "mtry": None, "min_leaf": 5},
    "oracle": {"fn": None},
}


@dataclass(frozen=True)
class LearnerSpec:
    """Which first-stage learner to use and how to tune it.

    ``kind="oracle"`` wraps a known function ``params["fn"]`` (x -> values);
    it exists for injecting true nuisances in tests and is not serializable.
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}; expected one of {KINDS}")
        unknown = set(self.params) - set(DEFAULTS[self.kind])
        if unknown:
            raise ValueError(f"unknown hyperparameters for {self.kind}: {sorted(unknown)}")
        merged = {**DEFAULTS[self.kind], **self.params}
        object.__setattr__(self, "params", merged)
        self._validate()

    def _validate(self):
        p = self.params
        if self.kind == "lasso":
            if p["c"] <= 1:
                raise ValueError("lasso: c must exceed 1")
            if p["gamma"] is not None and not 0 < p["gamma"] < 1:
                raise ValueError("lasso: gamma must lie in (0, 1)")
            if int(p["b"]) < 1:
                raise ValueError("lasso: b must be at least 1")
            if p["basis"] not in BASES:
                raise ValueError(f"lasso: basis must be one of {BASES}")
        elif self.kind == "logit_lasso":
            if int(p["cv_folds"]) < 2:
                raise ValueError("logit_lasso: cv_folds must be at least 2")
            if int(p["n_lambda"]) < 1 or not 0 < p["min_ratio"] < 1:
                raise ValueError("logit_lasso: invalid penalty grid settings")
            if p["basis"] not in BASES:
                raise ValueError(f"logit_lasso: basis must be one of {BASES}")
        elif self.kind == "kernel":
            if int(p["n_bandwidths"]) < 1 or not 0 < p["grid_lo"] <= p["grid_hi"]:
                raise ValueError("kernel: invalid bandwidth grid settings")
        elif self.kind == "forest":
            if int(p["n_trees"]) < 1 or int(p["min_leaf"]) < 1:
                raise ValueError("forest: n_trees and min_leaf must be at least 1")
            if p["mtry"] is not None and int(p["mtry"]) < 1:
                raise ValueError("forest: mtry must be at least 1")
        elif self.kind == "oracle" and not callable(p["fn"]):
            raise ValueError("oracle learner needs a callable 'fn'")

    def with_seed(self, seed: int) -> "LearnerSpec":
        return LearnerSpec(self.kind, {k: v for k, v in self.params.items()}, int(seed))

    def logit_options(self) -> dict:
        if self.kind != "logit_lasso":
            raise ValueError(f"expected a logit_lasso spec, got {self.kind}")
        p = self.params
        return {"lambda_grid": p["lambda_grid"], "cv_folds": int(p["cv_folds"]),
                "n_lambda": int(p["n_lambda"]), "min_ratio": float(p["min_ratio"]),
                "tol": float(p["tol"]), "cv_tol": float(p["cv_tol"]), "max_iter": int(p["max_iter"]), "basis": p["basis"]}

    def to_dict(self) -> dict:
        if self.kind == "oracle":
            raise TypeError("oracle learners are not serializable")
        params = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        return {"kind": self.kind, "params": params, "seed": self.seed}

    @classmethod
    def from_dict(cls, raw: dict) -> "LearnerSpec":
        return cls(raw["kind"], dict(raw.get("params", {})), int(raw.get("seed", 0)))


@dataclass(frozen=True)
class FixedPredictor:
    fn: Callable[[np.ndarray], np.ndarray]

    kind = "oracle"

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        return np.asarray(self.fn(x), dtype=float)


def fit_learner(spec: LearnerSpec, x, y):
    """Fit a regression (or, for logit_lasso, a binary classifier) of y on x."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    p = spec.params
    if spec.kind == "lasso":
        if p["lam"] is not None:
            return fit_lasso(x, y, float(p["lam"]), basis=p["basis"])
        return fit_lasso_auto(x, y, c=p["c"], gamma=p["gamma"], b=int(p["b"]), basis=p["basis"])
    if spec.kind == "logit_lasso":
        return fit_logit_lasso(x, y, seed=spec.seed, **spec.logit_options())
    if spec.kind == "kernel":
        grid = p["bandwidth_grid"]
        if grid is None:
            from .kernel import default_bandwidth_grid

            grid = default_bandwidth_grid(x, int(p["n_bandwidths"]), p["grid_lo"], p["grid_hi"])
        return fit_kernel_regression(x, y, grid)
    if spec.kind == "forest":
        return fit_random_forest(x, y, n_trees=int(p["n_trees"]), mtry=p["mtry"],
                                 min_leaf=int(p["min_leaf"]), seed=spec.seed)
    return FixedPredictor(p["fn"])


def fit_class_probabilities(spec: LearnerSpec, x, w):
    """Model of P(W = j | X) for every level j; returns an object with ``predict_proba``."""
    if spec.kind == "logit_lasso":
        return fit_multiclass_propensity(x, w, spec)
    if spec.kind == "oracle":
        return _FixedProba(spec.params["fn"])
    # regression learners: one indicator regression per level, renormalized
    w = np.asarray(w)
    classes = np.arange(int(w.max()) + 1)
    fits = tuple(fit_learner(spec, x, (w == c).astype(float)) for c in classes)
    return _StackedProba(classes, fits)


@dataclass(frozen=True)
class _FixedProba:
    fn: Callable[[np.ndarray], np.ndarray]

    def predict_proba(self, x) -> np.ndarray:
        return np.asarray(self.fn(np.atleast_2d(np.asarray(x, dtype=float))), dtype=float)


@dataclass(frozen=True)
class _StackedProba:
    classes: np.ndarray
    fits: tuple

    def predict_proba(self, x) -> np.ndarray:
        raw = np.column_stack([f.predict(x) for f in self.fits])
        raw = np.clip(raw, 1e-12, None)
        return raw / raw.sum(axis=1, keepdims=True)


def predict(fit, x0) -> float:
    """Pointwise prediction at a single covariate vector."""
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 1:
        raise ValueError("x0 must be a vector")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    if hasattr(fit, "p") and x0.shape[0] != fit.p:
        raise ValueError(f"expected {fit.p} covariates, got {x0.shape[0]}")
    out = fit.predict(x0[None, :])
    return float(np.asarray(out).ravel()[0]) if np.ndim(out) <= 1 else out[0]


__all__ = ["LearnerSpec", "fit_learner", "fit_class_probabilities", "predict"]
