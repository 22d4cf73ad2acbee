import numpy as np

BASES = ("linear", "quadratic")


def expand_basis(x: np.ndarray, basis: str = "linear") -> np.ndarray:
    """Dictionary of regressors built from raw covariates (intercept excluded)."""
    if basis == "linear":
        return x
    if basis == "quadratic":
        return np.hstack([x, x * x])
    raise ValueError(f"unknown basis {basis!r}; expected one of {BASES}")
