"""Dataset containers, CSV ingestion and K-fold partitioning."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np
import pandas as pd

DESIGNS = ("ro", "rcs", "multi")

# role -> meaning, per design
ROLES = {
    "ro": ("y_pre", "y_post", "treat"),
    "rcs": ("y", "time", "treat"),
    "multi": ("y_pre", "y_post", "level"),
}


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


def _as_vector(values, name: str, n: int | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise DataError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    if n is not None and arr.shape[0] != n:
        raise DataError(f"{name} has length {arr.shape[0]}, expected {n}")
    arr.setflags(write=False)
    return arr


def _as_indicator(values, name: str, n: int) -> np.ndarray:
    arr = _as_vector(values, name, n)
    if not np.all((arr == 0) | (arr == 1)):
        raise DataError(f"indicator out of range: {name} must take values in {{0,1}}")
    if arr.min() == arr.max():
        raise DataError(f"{name} must contain both 0 and 1")
    out = arr.astype(np.int8)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CovariateMatrix:
    """N x p matrix of control variables with optional column names."""

    values: np.ndarray
    column_names: tuple[str, ...] | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2:
            raise DataError(f"covariates must be a matrix, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise DataError("covariates contain NaN or Inf")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.column_names is not None:
            names = tuple(str(c) for c in self.column_names)
            if len(names) != vals.shape[1]:
                raise DataError(
                    f"{len(names)} column names for {vals.shape[1]} covariate columns"
                )
            object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def names(self) -> list[str]:
        if self.column_names is not None:
            return list(self.column_names)
        return [f"x{j + 1}" for j in range(self.p)]

    def take(self, idx) -> "CovariateMatrix":
        return CovariateMatrix(self.values[idx], self.column_names)


def _coerce_x(x) -> CovariateMatrix:
    return x if isinstance(x, CovariateMatrix) else CovariateMatrix(x)


@dataclass(frozen=True)
class RepeatedOutcomesData:
    """Both periods observed per unit: Y(0), Y(1), treatment D and covariates."""

    y_pre: np.ndarray
    y_post: np.ndarray
    d: np.ndarray
    x: CovariateMatrix

    design = "ro"

    def __post_init__(self):
        x = _coerce_x(self.x)
        object.__setattr__(self, "x", x)
        n = x.n
        object.__setattr__(self, "y_pre", _as_vector(self.y_pre, "y_pre", n))
        object.__setattr__(self, "y_post", _as_vector(self.y_post, "y_post", n))
        object.__setattr__(self, "d", _as_indicator(self.d, "d", n))

    @property
    def n(self) -> int:
        return self.x.n

    @property
    def delta_y(self) -> np.ndarray:
        return self.y_post - self.y_pre

    def subset(self, idx) -> "RepeatedOutcomesData":
        return RepeatedOutcomesData(self.y_pre[idx], self.y_post[idx], self.d[idx], self.x.take(idx))

    def columns(self) -> dict[str, np.ndarray]:
        return {"y_pre": self.y_pre, "y_post": self.y_post, "d": self.d}


@dataclass(frozen=True)
class RepeatedCrossSectionData:
    """One outcome per unit, with post-period indicator T and treatment D."""

    y: np.ndarray
    t: np.ndarray
    d: np.ndarray
    x: CovariateMatrix

    design = "rcs"

    def __post_init__(self):
        x = _coerce_x(self.x)
        object.__setattr__(self, "x", x)
        n = x.n
        object.__setattr__(self, "y", _as_vector(self.y, "y", n))
        object.__setattr__(self, "t", _as_indicator(self.t, "t", n))
        object.__setattr__(self, "d", _as_indicator(self.d, "d", n))

    @property
    def n(self) -> int:
        return self.x.n

    def subset(self, idx) -> "RepeatedCrossSectionData":
        return RepeatedCrossSectionData(self.y[idx], self.t[idx], self.d[idx], self.x.take(idx))

    def columns(self) -> dict[str, np.ndarray]:
        return {"y": self.y, "t": self.t, "d": self.d}


@dataclass(frozen=True)
class MultilevelData:
    """Repeated outcomes with treatment level W in {0, 1, ..., J}."""

    y_pre: np.ndarray
    y_post: np.ndarray
    w: np.ndarray
    x: CovariateMatrix
    levels: int = field(default=-1)

    design = "multi"

    def __post_init__(self):
        x = _coerce_x(self.x)
        object.__setattr__(self, "x", x)
        n = x.n
        object.__setattr__(self, "y_pre", _as_vector(self.y_pre, "y_pre", n))
        object.__setattr__(self, "y_post", _as_vector(self.y_post, "y_post", n))
        w = _as_vector(self.w, "w", n)
        if np.any(w < 0) or np.any(w != np.round(w)):
            raise DataError("treatment level must be a non-negative integer")
        w = w.astype(np.int64)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        levels = int(w.max()) if self.levels < 0 else int(self.levels)
        if levels < 1:
            raise DataError("multilevel data needs at least one nonzero level")
        if w.max() > levels:
            raise DataError(f"level {w.max()} exceeds declared J={levels}")
        present = set(np.unique(w).tolist())
        missing = [lv for lv in range(levels + 1) if lv not in present]
        if missing:
            raise DataError(f"treatment levels absent from data: {missing}")
        object.__setattr__(self, "levels", levels)

    @property
    def n(self) -> int:
        return self.x.n

    @property
    def delta_y(self) -> np.ndarray:
        return self.y_post - self.y_pre

    def subset(self, idx) -> "MultilevelData":
        return MultilevelData(self.y_pre[idx], self.y_post[idx], self.w[idx], self.x.take(idx))

    def columns(self) -> dict[str, np.ndarray]:
        return {"y_pre": self.y_pre, "y_post": self.y_post, "w": self.w}


Dataset = Union[RepeatedOutcomesData, RepeatedCrossSectionData, MultilevelData]


@dataclass(frozen=True)
class LoadReport:
    n_rows: int
    n_rejected: int


def load_dataset(
    path: str | os.PathLike,
    design: str,
    column_map: Mapping[str, str],
    covariates: Sequence[str] | None = None,
    strict: bool = True,
    with_report: bool = False,
):
    """Read a CSV file into the dataset type for ``design``.

    ``column_map`` maps each role of the design (see ``ROLES``) to a column
    name. All remaining numeric columns become covariates unless
    ``covariates`` lists them explicitly. Rows with a missing value in any
    used column raise in strict mode; with ``strict=False`` they are dropped
    and counted in the ``LoadReport`` returned alongside the dataset when
    ``with_report`` is set.
    """
    if design not in ROLES:
        raise DataError(f"unknown design {design!r}; expected one of {DESIGNS}")
    if not os.path.exists(path):
        raise DataError(f"input file not found: {path}")
    roles = ROLES[design]
    missing_roles = [r for r in roles if r not in column_map]
    if missing_roles:
        raise DataError(f"column_map lacks roles {missing_roles} for design {design!r}")
    unknown = [r for r in column_map if r not in roles]
    if unknown:
        raise DataError(f"roles {unknown} are not used by design {design!r}")
    role_cols = [column_map[r] for r in roles]
    if len(set(role_cols)) != len(role_cols):
        raise DataError(f"the same column is mapped to several roles: {role_cols}")

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"could not parse CSV {path}: {exc}") from exc
    header = list(frame.columns)
    # pandas renames duplicate names to "a.1"; check the raw header row
    with open(path, encoding="utf-8", newline="") as fh:
        raw_header = next(csv.reader(fh), [])
    dupes = sorted({c for c in raw_header if raw_header.count(c) > 1})
    if dupes:
        raise DataError(f"duplicate column names in header: {dupes}")
    absent = [c for c in role_cols if c not in header]
    if absent:
        raise DataError(f"mapped columns not found in header: {absent}")

    if covariates is None:
        candidates = [c for c in header if c not in role_cols]
        cov_cols = [c for c in candidates if _is_numeric_column(frame[c])]
    else:
        cov_cols = list(covariates)
        clash = [c for c in cov_cols if c in role_cols]
        if clash:
            raise DataError(f"columns {clash} are both a role and a covariate")
        absent = [c for c in cov_cols if c not in header]
        if absent:
            raise DataError(f"covariate columns not found in header: {absent}")
    if not cov_cols:
        raise DataError("no covariate columns")

    used = role_cols + cov_cols
    blank = frame[used].apply(lambda s: s.str.strip() == "")
    bad_rows = blank.any(axis=1).to_numpy()
    n_rejected = int(bad_rows.sum())
    if n_rejected and strict:
        raise DataError(f"{n_rejected} rows have missing values in mapped columns")
    frame = frame.loc[~bad_rows]

    numeric = {}
    for col in used:
        try:
            numeric[col] = frame[col].astype(float).to_numpy()
        except ValueError as exc:
            raise DataError(f"non-numeric value in column {col!r}: {exc}") from exc
        if not np.all(np.isfinite(numeric[col])):
            raise DataError(f"non-finite value in column {col!r}")
    x = CovariateMatrix(np.column_stack([numeric[c] for c in cov_cols]), tuple(cov_cols))
    cols = {r: numeric[column_map[r]] for r in roles}

    if design == "ro":
        ds = RepeatedOutcomesData(cols["y_pre"], cols["y_post"], cols["treat"], x)
    elif design == "rcs":
        ds = RepeatedCrossSectionData(cols["y"], cols["time"], cols["treat"], x)
    else:
        ds = MultilevelData(cols["y_pre"], cols["y_post"], cols["level"], x)
    if with_report:
        return ds, LoadReport(len(bad_rows), n_rejected)
    return ds


def _is_numeric_column(col: pd.Series) -> bool:
    vals = col.str.strip()
    vals = vals[vals != ""]
    if vals.empty:
        return False
    return bool(pd.to_numeric(vals, errors="coerce").notna().all())


def save_dataset(ds: Dataset, path: str | os.PathLike) -> None:
    """Write ``ds`` to CSV with round-trip float precision."""
    cols = dict(ds.columns())
    for name, values in zip(ds.x.names(), ds.x.values.T):
        cols[name] = values
    pd.DataFrame(cols).to_csv(path, index=False, float_format="%.17g")


def default_column_map(design: str) -> dict[str, str]:
    """Column names written by ``save_dataset`` for each role."""
    names = {"ro": ("y_pre", "y_post", "d"), "rcs": ("y", "t", "d"), "multi": ("y_pre", "y_post", "w")}
    return dict(zip(ROLES[design], names[design]))


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: np.ndarray
    seed: int

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    def fold(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def complement(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != k)

    def sizes(self) -> list[int]:
        return np.bincount(self.assignment, minlength=self.k).tolist()


def make_folds(n: int, k: int, seed: int) -> FoldPlan:
    """Random partition of ``range(n)`` into ``k`` folds whose sizes differ by at most one."""
    if k < 2:
        raise ValueError(f"need at least 2 folds, got k={k}")
    if k > n:
        raise ValueError(f"cannot split {n} observations into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    for fold, block in enumerate(np.array_split(perm, k)):
        assignment[block] = fold
    return FoldPlan(k, assignment, int(seed))

