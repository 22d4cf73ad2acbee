"""Simulation designs, Monte Carlo runner and result export."""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .crossfit import (
    EstimationError,
    EstimatorSpec,
    estimate,
    estimate_conventional,
    with_seed,
)
from .data import (
    CovariateMatrix,
    MultilevelData,
    RepeatedCrossSectionData,
    RepeatedOutcomesData,
)
from .learners import LearnerSpec
from .scores import Direction, NuisanceAt, Population, ScoreParams


class DgpId(str, Enum):
    RO_ML = "ro_ml"
    RO_KERNEL = "ro_kernel"
    RCS_ML = "rcs_ml"
    RCS_KERNEL = "rcs_kernel"
    MULTI_ML = "multi_ml"
    MULTI_KERNEL = "multi_kernel"

    @property
    def design(self) -> str:
        return self.value.split("_")[0]

    @property
    def is_ml(self) -> bool:
        return self.value.endswith("_ml")

    @classmethod
    def parse(cls, raw) -> "DgpId":
        if isinstance(raw, cls):
            return raw
        try:
            return cls(str(raw).lower())
        except ValueError:
            raise ValueError(f"unknown DGP {raw!r}; expected one of {[d.value for d in cls]}") from None


THETA = 3.0
THETA_LEVELS = (3.0, 6.0)  # level 1 and level 2 effects in the multilevel designs
LEVEL_SHARES = (0.3, 0.3, 0.4)
ERROR_VARIANCE = 0.1
NOISE_MODES = ("variance", "sd")


def gamma0(p: int) -> np.ndarray:
    g = np.zeros(p)
    g[:5] = 1.0 / np.arange(1, 6)
    return g


def beta0(p: int) -> np.ndarray:
    return gamma0(p) + 0.5


def noise_sd(noise: str) -> float:
    """Error SD: the 0.1 in N(0, 0.1) read as a variance (default) or as an SD."""
    if noise == "variance":
        return float(np.sqrt(ERROR_VARIANCE))
    if noise == "sd":
        return ERROR_VARIANCE
    raise ValueError(f"noise must be one of {NOISE_MODES}")


def _logistic(u):
    return 1.0 / (1.0 + np.exp(-u))


@dataclass(frozen=True)
class TrueNuisances:
    """Population nuisance functions of a design, as callables of the covariate matrix.

    ``g`` gives P(D=1|X) for binary designs; ``proba`` gives the matrix of
    P(W=j|X) for multilevel designs; ``ell`` gives the untreated-group
    conditional mean nuisance (for repeated cross sections this already
    includes the post-period share factor).
    """

    ell: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray] | None = None
    proba: Callable[[np.ndarray], np.ndarray] | None = None

    def at(self, x, target: int = 2) -> NuisanceAt:
        if self.proba is not None:
            pr = self.proba(x)
            return NuisanceAt(ell=self.ell(x), g_w=pr[:, target], g_z=pr[:, 0])
        return NuisanceAt(ell=self.ell(x), g=self.g(x))


def true_nuisances(dgp, p: int = 100, lam: float = 0.5) -> TrueNuisances:
    dgp = DgpId.parse(dgp)
    if dgp is DgpId.RO_ML:
        gam = gamma0(p)
        return TrueNuisances(ell=lambda x: np.ones(x.shape[0]), g=lambda x: _logistic(x @ gam))
    if dgp is DgpId.RCS_ML:
        gam = gamma0(p)
        scale = lam * (1.0 - lam)
        return TrueNuisances(ell=lambda x: np.full(x.shape[0], scale), g=lambda x: _logistic(x @ gam))
    if dgp is DgpId.RO_KERNEL:
        return TrueNuisances(ell=lambda x: x[:, 0].copy(), g=lambda x: _logistic(x[:, 0] - 0.5))
    if dgp is DgpId.RCS_KERNEL:
        scale = lam * (1.0 - lam)
        return TrueNuisances(ell=lambda x: scale * x[:, 0], g=lambda x: _logistic(x[:, 0] - 0.5))
    if dgp is DgpId.MULTI_ML:
        shares = np.array(LEVEL_SHARES)
        return TrueNuisances(ell=lambda x: np.ones(x.shape[0]),
                             proba=lambda x: np.tile(shares, (x.shape[0], 1)))

    def proba(x):
        logits = -0.5 * (x[:, [0]] - np.arange(3.0)) ** 2
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    return TrueNuisances(ell=lambda x: x[:, 0].copy(), proba=proba)


@dataclass(frozen=True)
class SimDraw:
    dgp: DgpId
    data: object
    theta: float
    truth: TrueNuisances
    target_level: int | None = None


def true_theta(dgp, target_level: int = 2) -> float:
    dgp = DgpId.parse(dgp)
    if dgp.design == "multi":
        return THETA_LEVELS[target_level - 1]
    return THETA


def generate_dataset(dgp, n: int, p: int = 100, seed: int = 0, *, noise: str = "variance",
                     target_level: int = 2) -> SimDraw:
    """One draw of ``n`` observations from a simulation design.

    ``p`` is the covariate dimension of the high-dimensional designs and is
    ignored by the kernel designs (scalar covariate).
    """
    dgp = DgpId.parse(dgp)
    if n < 1:
        raise ValueError("n must be positive")
    if dgp.is_ml and p < 5:
        raise ValueError(f"{dgp.value} needs p >= 5, got {p}")
    sd = noise_sd(noise)
    rng = np.random.default_rng(seed)
    kp = p if dgp.is_ml else 1
    names = tuple(f"x{j + 1}" for j in range(kp))

    if dgp.design == "multi":
        if dgp.is_ml:
            x = rng.standard_normal((n, p))
            w = rng.choice(3, size=n, p=LEVEL_SHARES)
            y0 = x @ beta0(p) + sd * rng.standard_normal(n)
            drift = 1.0
        else:
            w = rng.integers(0, 3, size=n)
            x = (w + rng.standard_normal(n))[:, None]
            y0 = sd * rng.standard_normal(n)
            drift = x[:, 0]
        e2, e3, e4 = sd * rng.standard_normal((3, n))
        y1_untreated = y0 + drift + e2
        effect = np.where(w == 1, THETA_LEVELS[0] + e3, np.where(w == 2, THETA_LEVELS[1] + e4, 0.0))
        data = MultilevelData(y0, y1_untreated + effect, w, CovariateMatrix(x, names))
        return SimDraw(dgp, data, true_theta(dgp, target_level), true_nuisances(dgp, kp), target_level)

    if dgp.is_ml:
        mean = 0.3 if dgp.design == "rcs" else 0.0
        x = mean + rng.standard_normal((n, p))
        d = (rng.random(n) < _logistic(x @ gamma0(p))).astype(np.int64)
        base = 1.0 if dgp.design == "rcs" else x @ beta0(p)
        y0 = base + sd * rng.standard_normal(n)
        drift = 1.0
    else:
        d = (rng.random(n) < 0.5).astype(np.int64)
        x = (d + rng.standard_normal(n))[:, None]
        y0 = sd * rng.standard_normal(n)
        drift = x[:, 0]
    e2, e3 = sd * rng.standard_normal((2, n))
    y1 = y0 + drift + e2 + d * (THETA + e3)
    cov = CovariateMatrix(x, names)
    if dgp.design == "ro":
        data = RepeatedOutcomesData(y0, y1, d, cov)
    else:
        t = (rng.random(n) < 0.5).astype(np.int64)
        data = RepeatedCrossSectionData(y0 + t * (y1 - y0), t, d, cov)
    return SimDraw(dgp, data, THETA, true_nuisances(dgp, kp))


def default_estimator(dgp, seed: int = 0, k_folds: int = 5, target_level: int = 2) -> EstimatorSpec:
    """Learners used for a design: logit lasso + lasso for ML designs, kernels otherwise."""
    dgp = DgpId.parse(dgp)
    if dgp.is_ml:
        prop, outcome = LearnerSpec("logit_lasso"), LearnerSpec("lasso")
    else:
        prop, outcome = LearnerSpec("kernel"), LearnerSpec("kernel")
    return EstimatorSpec(dgp.design, prop, outcome, k_folds=k_folds, seed=seed,
                         target_level=target_level if dgp.design == "multi" else 1)


# orthogonality probe population ---------------------------------------------

def probe_population(dgp, n: int = 100_000, p: int = 100, seed: int = 0, *,
                     noise: str = "variance", target_level: int = 2) -> Population:
    """A large draw with the true nuisances evaluated at every row.

    The treated share is the population draw's own share, so the mean score
    at the truth is zero up to sampling noise.
    """
    draw = generate_dataset(dgp, n, p, seed, noise=noise, target_level=target_level)
    data, x = draw.data, draw.data.x.values
    truth = draw.truth.at(x, target_level)
    if isinstance(data, MultilevelData):
        obs = {"delta_y": data.delta_y, "w": data.w, "target": target_level}
        share = float(np.mean(data.w == target_level))
        params = ScoreParams(draw.theta, share)
    elif isinstance(data, RepeatedOutcomesData):
        obs = {"delta_y": data.delta_y, "d": data.d}
        params = ScoreParams(draw.theta, float(data.d.mean()))
    else:
        obs = {"y": data.y, "t": data.t, "d": data.d}
        params = ScoreParams(draw.theta, float(data.d.mean()), 0.5)
    return Population(draw.dgp.design, obs, x, params, truth)


def sine_direction(amplitude: float = 0.1, shift: float = 0.5, lo: float = 0.05,
                   hi: float = 0.95) -> Direction:
    """Propensity bent by amplitude*sin(x1) (then clipped) and outcome nuisance shifted.

    A zero amplitude or shift leaves that nuisance at its true value.
    """

    def bend(x, base):
        return np.clip(base + amplitude * np.sin(x[:, 0]), lo, hi)

    def move(x, base):
        return base + shift

    if amplitude == 0:
        bend = None
    if shift == 0:
        move = None
    return Direction(g=bend, ell=move, g_w=bend)


# Monte Carlo -----------------------------------------------------------------

@dataclass(frozen=True)
class McSummary:
    estimates: np.ndarray
    ses: np.ndarray
    true_theta: float
    mean: float
    bias: float
    sd: float
    rmse: float
    coverage_95: float
    mean_se: float
    n_failed: int = 0
    replicates: np.ndarray | None = None
    degenerate: bool = False

    @property
    def r(self) -> int:
        return int(self.estimates.shape[0])

    @property
    def covered(self) -> np.ndarray:
        return np.abs(self.estimates - self.true_theta) <= 1.96 * self.ses

    @property
    def se_ratio(self) -> float:
        return float(self.mean_se / self.sd) if self.sd > 0 else float("nan")

    def to_dict(self, include_estimates: bool = False) -> dict:
        out = {
            "r": self.r, "true_theta": self.true_theta, "mean": self.mean, "bias": self.bias,
            "sd": self.sd, "rmse": self.rmse, "coverage_95": self.coverage_95,
            "mean_se": self.mean_se, "n_failed": self.n_failed, "degenerate": self.degenerate,
        }
        if include_estimates:
            out["estimates"] = self.estimates.tolist()
            out["ses"] = self.ses.tolist()
        return out


def summarize_estimates(estimates, ses, true_theta: float, *, n_failed: int = 0,
                        replicates=None) -> McSummary:
    est = np.asarray(estimates, dtype=float)
    ses = np.asarray(ses, dtype=float)
    if est.ndim != 1 or est.shape != ses.shape:
        raise ValueError(f"estimates and ses must be vectors of equal length, got {est.shape} and {ses.shape}")
    if est.size == 0:
        raise ValueError("no estimates to summarize")
    r = est.size
    mean = float(est.mean())
    bias = mean - true_theta
    sd = float(est.std(ddof=1)) if r > 1 else 0.0
    rmse = float(np.sqrt(np.mean((est - true_theta) ** 2)))
    coverage = float(np.mean(np.abs(est - true_theta) <= 1.96 * ses))
    reps = np.arange(r) if replicates is None else np.asarray(replicates)
    return McSummary(est, ses, float(true_theta), mean, bias, sd, rmse, coverage,
                     float(ses.mean()), int(n_failed), reps, degenerate=r == 1)


METHODS = ("orthogonal", "conventional", "both")


@dataclass(frozen=True)
class McRun:
    dgp: DgpId
    n: int
    p: int
    seed: int
    summaries: dict = field(default_factory=dict)

    def __getitem__(self, method: str) -> McSummary:
        return self.summaries[method]


def _replicate(job):
    dgp, spec, n, p, seed, methods, noise = job
    draw = generate_dataset(dgp, n, p, seed, noise=noise, target_level=spec.target_level)
    spec = with_seed(spec, seed)
    out = {}
    for m in methods:
        try:
            res = estimate(draw.data, spec) if m == "orthogonal" else estimate_conventional(draw.data, spec)
            out[m] = (res.theta_hat, res.se)
        except EstimationError:
            out[m] = None
    return out


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("ORTHODID_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    if threads < 1:
        raise ValueError("threads must be at least 1")
    return threads


def run_monte_carlo(dgp, spec: EstimatorSpec | None = None, n: int = 200, p: int = 100,
                    r: int = 100, seed: int = 0, *, method: str = "orthogonal",
                    noise: str = "variance", threads: int | None = 1, progress=None) -> McRun:
    """Replicate estimation on fresh draws; replication i uses seed+i for data and fits.

    ``method="both"`` runs the orthogonal and conventional estimators on the
    same draw in each replication. Replications whose estimator raises an
    ``EstimationError`` are counted as failed and left out of the summary.
    """
    dgp = DgpId.parse(dgp)
    if r < 1:
        raise ValueError("r must be at least 1")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    spec = spec or default_estimator(dgp, seed)
    if spec.design != dgp.design:
        raise ValueError(f"estimator design {spec.design!r} does not match {dgp.value}")
    methods = ("orthogonal", "conventional") if method == "both" else (method,)
    jobs = [(dgp, spec, n, p, seed + i, methods, noise) for i in range(r)]
    threads = resolve_threads(threads)
    if threads == 1:
        results = []
        for i, job in enumerate(jobs):
            results.append(_replicate(job))
            if progress is not None:
                progress(i + 1, r)
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_replicate, jobs, chunksize=max(1, r // (4 * threads))))
    theta0 = true_theta(dgp, spec.target_level)
    summaries = {}
    for m in methods:
        ok = [(i, res[m]) for i, res in enumerate(results) if res[m] is not None]
        if not ok:
            raise EstimationError(f"all {r} replications failed for the {m} estimator")
        reps = np.array([i for i, _ in ok])
        est = np.array([v[0] for _, v in ok])
        ses = np.array([v[1] for _, v in ok])
        summaries[m] = summarize_estimates(est, ses, theta0, n_failed=r - len(ok), replicates=reps)
    return McRun(dgp, n, p, seed, summaries)


# export ----------------------------------------------------------------------

def histogram(estimates, bins: int = 40) -> dict:
    """Equal-width bins over [min, max] of the estimates."""
    est = np.asarray(estimates, dtype=float)
    counts, edges = np.histogram(est, bins=bins, range=(est.min(), est.max()))
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def write_replicates_csv(path, summary: McSummary) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["replicate", "estimate", "se", "covered"])
        for rep, est, se, cov in zip(summary.replicates, summary.estimates, summary.ses, summary.covered):
            out.writerow([int(rep), repr(float(est)), repr(float(se)), int(cov)])


def write_summary_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
