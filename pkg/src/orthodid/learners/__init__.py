"""First-stage nuisance learners."""

from .forest import ForestFit, fit_random_forest
from .kernel import KernelFit, fit_kernel_regression
from .linear import (
    DegenerateResponseError,
    LinearFit,
    compute_penalty_loadings,
    fit_lasso,
    fit_lasso_auto,
)
from .logistic import LogisticFit, MulticlassFit, fit_logit_lasso, fit_multiclass_propensity
from .spec import LearnerSpec, fit_class_probabilities, fit_learner, predict

__all__ = [
    "DegenerateResponseError",
    "ForestFit",
    "KernelFit",
    "LearnerSpec",
    "LinearFit",
    "LogisticFit",
    "MulticlassFit",
    "compute_penalty_loadings",
    "fit_class_probabilities",
    "fit_kernel_regression",
    "fit_lasso",
    "fit_lasso_auto",
    "fit_learner",
    "fit_logit_lasso",
    "fit_multiclass_propensity",
    "fit_random_forest",
    "predict",
]
