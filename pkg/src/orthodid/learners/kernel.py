"""Nadaraya-Watson regression with a product Gaussian kernel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import nw_loo_scores
from .linear import _check_x


@dataclass(frozen=True)
class KernelFit:
    train_x: np.ndarray
    train_y: np.ndarray
    bandwidth: float
    bandwidth_grid: np.ndarray | None = None
    cv_scores: np.ndarray | None = None

    kind = "kernel"

    def __post_init__(self):
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValueError(f"bandwidth must be positive and finite, got {self.bandwidth}")

    @property
    def p(self) -> int:
        return self.train_x.shape[1]

    def predict_with_fallbacks(self, x) -> tuple[np.ndarray, int]:
        """Predictions plus the number of query points whose kernel weights all underflowed."""
        x = _check_x(x, self.p)
        sq = _sqdist(x, self.train_x)
        w = np.exp(-0.5 * sq / self.bandwidth ** 2)
        den = w.sum(axis=1)
        empty = den == 0
        out = np.empty(x.shape[0])
        out[~empty] = (w[~empty] @ self.train_y) / den[~empty]
        out[empty] = self.train_y.mean()
        return out, int(empty.sum())

    def predict(self, x) -> np.ndarray:
        return self.predict_with_fallbacks(x)[0]


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(sq, 0.0)


def default_bandwidth_grid(x, n: int = 20, lo: float = 0.1, hi: float = 3.0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    m = x.shape[0]
    scale = float(np.mean(x.std(axis=0, ddof=1))) if m > 1 else 1.0
    if not scale > 0:
        scale = 1.0
    base = scale * m ** (-0.2)
    return np.geomspace(lo * base, hi * base, n)


def fit_kernel_regression(x, y, bandwidth_grid=None) -> KernelFit:
    """Gaussian-kernel smoother with the bandwidth picked by leave-one-out CV.

    Ties in the CV score go to the larger bandwidth.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float)
    m = x.shape[0]
    if y.shape != (m,):
        raise ValueError(f"response has shape {y.shape}, expected ({m},)")
    grid = default_bandwidth_grid(x) if bandwidth_grid is None else np.asarray(bandwidth_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty bandwidth grid")
    if np.any(~np.isfinite(grid)) or np.any(grid <= 0):
        raise ValueError("bandwidths must be positive and finite")
    grid = np.sort(grid)
    if m < 2 or grid.size == 1:
        return KernelFit(x.copy(), y.copy(), float(grid[-1]), grid, None)
    scores = nw_loo_scores(_sqdist(x, x), y, grid)
    best = grid.size - 1 - int(np.argmin(scores[::-1]))
    return KernelFit(x.copy(), y.copy(), float(grid[best]), grid, scores)
