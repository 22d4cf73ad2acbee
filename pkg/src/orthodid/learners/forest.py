"""Bagged regression trees with per-node feature subsampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import build_tree, leaf_means, predict_tree
from .linear import _check_x


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return predict_tree(x, self.feature, self.threshold, self.left, self.right, self.value)


@dataclass(frozen=True)
class ForestFit:
    trees: tuple[Tree, ...]
    n_trees: int
    mtry: int
    min_leaf: int
    seed: int
    n_features: int

    kind = "forest"

    @property
    def p(self) -> int:
        return self.n_features

    def predict(self, x) -> np.ndarray:
        x = np.ascontiguousarray(_check_x(x, self.p))
        total = np.zeros(x.shape[0])
        for tree in self.trees:
            total += tree.predict(x)
        return total / len(self.trees)


def default_mtry(p: int) -> int:
    return max(1, math.ceil(p / 3))


def fit_random_forest(x, y, n_trees: int = 500, mtry: int | None = None,
                      min_leaf: int = 5, seed: int = 0) -> ForestFit:
    """Random forest regression.

    Every tree is grown on a bootstrap resample. At each node ``mtry``
    features are drawn without replacement and the split minimizing the
    children's summed squared deviations is taken over midpoints of sorted
    unique values; nodes with fewer than ``2 * min_leaf`` rows or constant
    response become leaves. A leaf predicts the mean response of the
    original training rows that fall into it.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float)
    m, p = x.shape
    if y.shape != (m,):
        raise ValueError(f"response has shape {y.shape}, expected ({m},)")
    mtry = default_mtry(p) if mtry is None else int(mtry)
    if n_trees < 1:
        raise ValueError("n_trees must be at least 1")
    if not 1 <= mtry <= p:
        raise ValueError(f"mtry must lie in [1, {p}]")
    if min_leaf < 1:
        raise ValueError("min_leaf must be at least 1")
    rng = np.random.default_rng(seed)
    xf = np.asfortranarray(x)
    trees = []
    for _ in range(n_trees):
        sample = rng.integers(0, m, size=m)
        tree_seed = int(rng.integers(0, 2**31 - 1))
        feature, threshold, left, right, value = build_tree(xf, y, sample, mtry, min_leaf, tree_seed)
        value = leaf_means(xf, y, feature, threshold, left, right, value)
        trees.append(Tree(feature, threshold, left, right, value))
    return ForestFit(tuple(trees), n_trees, mtry, min_leaf, int(seed), p)
