"""Cross-fitted orthogonal ATT estimators and the full-sample conventional comparison.

Each fold's nuisances are fit on the complementary (auxiliary) sample and
evaluated on the fold. The final estimate is the fold-size weighted mean of
the per-fold estimates, and the variance uses the per-fold plug-in formula
with the Jacobian corrections for the estimated treated share (and, for
repeated cross sections, the post-period share).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import (
    FoldPlan,
    MultilevelData,
    RepeatedCrossSectionData,
    RepeatedOutcomesData,
    make_folds,
)
from .learners import LearnerSpec, fit_class_probabilities, fit_learner
from .scores import NuisanceAt, ScoreParams, score_rcs_lambda_derivative

Z95 = 1.959963984540054


class EstimationError(RuntimeError):
    """Raised when an estimate cannot be formed (degenerate folds, failed learners)."""


@dataclass(frozen=True)
class EstimatorSpec:
    design: str
    propensity_learner: LearnerSpec = field(default_factory=lambda: LearnerSpec("logit_lasso"))
    outcome_learner: LearnerSpec = field(default_factory=lambda: LearnerSpec("lasso"))
    k_folds: int = 5
    clip: float = 0.01
    seed: int = 0
    target_level: int = 1
    cross_fit: bool = True
    max_fold_retries: int = 100

    def __post_init__(self):
        if self.design not in ("ro", "rcs", "multi"):
            raise ValueError(f"unknown design {self.design!r}")
        if self.k_folds < 2:
            raise ValueError("k_folds must be at least 2")
        if not 0 < self.clip < 0.5:
            raise ValueError("clip must lie in (0, 0.5)")
        if self.design == "multi" and self.target_level < 1:
            raise ValueError("target_level must be a nonzero treatment level")

    def to_dict(self) -> dict:
        return {
            "design": self.design,
            "propensity_learner": self.propensity_learner.to_dict(),
            "outcome_learner": self.outcome_learner.to_dict(),
            "k_folds": self.k_folds,
            "clip": self.clip,
            "seed": self.seed,
            "target_level": self.target_level,
            "cross_fit": self.cross_fit,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EstimatorSpec":
        raw = dict(raw)
        raw["propensity_learner"] = LearnerSpec.from_dict(raw["propensity_learner"])
        raw["outcome_learner"] = LearnerSpec.from_dict(raw["outcome_learner"])
        return cls(**raw)


@dataclass(frozen=True)
class AttResult:
    theta_hat: float
    sigma_hat: float
    n: int
    per_fold_theta: np.ndarray
    fold_sizes: np.ndarray
    p_hat_per_fold: np.ndarray
    lambda_hat_per_fold: np.ndarray | None = None
    method: str = "orthogonal"
    diagnostics: dict = field(default_factory=dict)

    @property
    def se(self) -> float:
        return float(np.sqrt(self.sigma_hat / self.n))

    @property
    def ci_95(self) -> tuple[float, float]:
        half = Z95 * self.se
        return (self.theta_hat - half, self.theta_hat + half)

    @property
    def k_folds(self) -> int:
        return len(self.per_fold_theta)

    def to_dict(self) -> dict:
        lam = self.lambda_hat_per_fold
        per_fold = []
        for k in range(self.k_folds):
            rec = {"fold": k, "size": int(self.fold_sizes[k]), "theta": float(self.per_fold_theta[k]),
                   "p_hat": float(self.p_hat_per_fold[k])}
            if lam is not None:
                rec["lambda_hat"] = float(lam[k])
            per_fold.append(rec)
        return {
            "method": self.method,
            "theta_hat": float(self.theta_hat),
            "se": self.se,
            "ci_95": list(self.ci_95),
            "sigma_hat": float(self.sigma_hat),
            "n": self.n,
            "k_folds": self.k_folds,
            "per_fold": per_fold,
            "diagnostics": _jsonable(self.diagnostics),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def learner_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(fold)]).generate_state(1)[0])


def _clip(g: np.ndarray, clip: float) -> tuple[np.ndarray, int]:
    out = np.clip(g, clip, 1.0 - clip)
    return out, int(np.count_nonzero(out != g))


def _predict(fit, x, diag: dict) -> np.ndarray:
    if hasattr(fit, "predict_with_fallbacks"):
        out, fallbacks = fit.predict_with_fallbacks(x)
        diag["kernel_fallbacks"] += fallbacks
        return out
    return np.asarray(fit.predict(x), dtype=float)


def _note_fit(fit, diag: dict, role: str) -> None:
    flags = diag["converged"].setdefault(role, [])
    if hasattr(fit, "converged"):
        flags.append(bool(fit.converged))
    elif hasattr(fit, "fits"):
        flags.append(all(bool(getattr(f, "converged", True)) for f in fit.fits))
    else:
        flags.append(True)


def _plan_folds(n: int, spec: EstimatorSpec, valid, folds: FoldPlan | None, diag: dict) -> FoldPlan:
    if n < 2 * spec.k_folds:
        raise EstimationError(f"N={n} is too small for {spec.k_folds} folds (need N >= 2K)")
    if folds is not None:
        if folds.n != n:
            raise EstimationError(f"fold plan covers {folds.n} rows, data has {n}")
        bad = [k for k in range(folds.k) if not valid(folds.complement(k))]
        if bad:
            raise EstimationError(f"auxiliary samples of folds {bad} are degenerate")
        diag["fold_retries"] = 0
        return folds
    for attempt in range(spec.max_fold_retries + 1):
        plan = make_folds(n, spec.k_folds, spec.seed + attempt)
        if all(valid(plan.complement(k)) for k in range(plan.k)):
            diag["fold_retries"] = attempt
            return plan
    raise EstimationError(
        f"no valid fold plan after {spec.max_fold_retries} re-draws: some auxiliary sample lacks "
        "a required treatment arm or period"
    )


def _splits(n: int, spec: EstimatorSpec, valid, folds, diag):
    """(evaluation rows, auxiliary rows) per fold; a single full-sample split without cross-fitting."""
    if not spec.cross_fit:
        everything = np.arange(n)
        if not valid(everything):
            raise EstimationError("sample lacks a required treatment arm or period")
        diag["fold_retries"] = 0
        return [(everything, everything)]
    plan = _plan_folds(n, spec, valid, folds, diag)
    return [(plan.fold(k), plan.complement(k)) for k in range(plan.k)]


def _new_diag() -> dict:
    return {"clipped": 0, "kernel_fallbacks": 0, "converged": {}}


def _combine(thetas, sizes):
    sizes = np.asarray(sizes, dtype=float)
    return float(np.dot(thetas, sizes) / sizes.sum())


def _fit_binary(spec: EstimatorSpec, x, d, seed, diag):
    try:
        fit = fit_learner(spec.propensity_learner.with_seed(seed), x, d)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise EstimationError(f"propensity learner failed: {exc}") from exc
    _note_fit(fit, diag, "propensity")
    return fit


def _fit_outcome(spec: EstimatorSpec, x, y, seed, diag):
    if y.shape[0] < 2:
        raise EstimationError("fewer than two untreated units in an auxiliary sample")
    try:
        fit = fit_learner(spec.outcome_learner.with_seed(seed), x, y)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise EstimationError(f"outcome learner failed: {exc}") from exc
    _note_fit(fit, diag, "outcome")
    return fit


def estimate_ro(data: RepeatedOutcomesData, spec: EstimatorSpec,
                folds: FoldPlan | None = None) -> AttResult:
    """Cross-fitted orthogonal ATT for repeated outcomes."""
    x, d, dy = data.x.values, data.d.astype(float), data.delta_y
    diag = _new_diag()

    def valid(aux):
        da = d[aux]
        return 0 < da.sum() < aux.size - 1

    thetas, sizes, p_hats, parts = [], [], [], []
    for k, (ev, aux) in enumerate(_splits(data.n, spec, valid, folds, diag)):
        seed = learner_seed(spec.seed, k)
        p_k = float(d[aux].mean())
        g, clipped = _clip(_predict(_fit_binary(spec, x[aux], d[aux], seed, diag), x[ev], diag), spec.clip)
        diag["clipped"] += clipped
        ctrl = aux[d[aux] == 0]
        ell = _predict(_fit_outcome(spec, x[ctrl], dy[ctrl], seed, diag), x[ev], diag)
        terms = (d[ev] - g) / (p_k * (1.0 - g)) * (dy[ev] - ell)
        thetas.append(float(terms.mean()))
        sizes.append(ev.size)
        p_hats.append(p_k)
        parts.append((terms, d[ev], p_k))
    theta = _combine(thetas, sizes)
    fold_var = [np.mean((terms - theta - theta / p_k * (dk - p_k)) ** 2) for terms, dk, p_k in parts]
    sigma = _combine(fold_var, sizes)
    diag["fold_sizes"] = sizes
    return AttResult(theta, sigma, data.n, np.array(thetas), np.array(sizes), np.array(p_hats),
                     None, "orthogonal", diag)


def estimate_rcs(data: RepeatedCrossSectionData, spec: EstimatorSpec,
                 folds: FoldPlan | None = None) -> AttResult:
    """Cross-fitted orthogonal ATT for repeated cross sections."""
    x, d, t, y = data.x.values, data.d.astype(float), data.t.astype(float), data.y
    diag = _new_diag()

    def valid(aux):
        da, ta = d[aux], t[aux]
        return 0 < da.sum() < aux.size - 1 and 0 < ta.sum() < aux.size

    thetas, sizes, p_hats, lam_hats, parts = [], [], [], [], []
    for k, (ev, aux) in enumerate(_splits(data.n, spec, valid, folds, diag)):
        seed = learner_seed(spec.seed, k)
        p_k = float(d[aux].mean())
        lam_k = float(t[aux].mean())
        g, clipped = _clip(_predict(_fit_binary(spec, x[aux], d[aux], seed, diag), x[ev], diag), spec.clip)
        diag["clipped"] += clipped
        ctrl = aux[d[aux] == 0]
        resp = (t[ctrl] - lam_k) * y[ctrl]
        ell = _predict(_fit_outcome(spec, x[ctrl], resp, seed, diag), x[ev], diag)
        terms = (d[ev] - g) / (p_k * lam_k * (1.0 - lam_k) * (1.0 - g)) * ((t[ev] - lam_k) * y[ev] - ell)
        thetas.append(float(terms.mean()))
        sizes.append(ev.size)
        p_hats.append(p_k)
        lam_hats.append(lam_k)
        parts.append((ev, terms, g, ell, p_k, lam_k))
    theta = _combine(thetas, sizes)
    fold_var, g_lams = [], []
    for ev, terms, g, ell, p_k, lam_k in parts:
        params = ScoreParams(theta, p_k, lam_k)
        g_lam = float(np.mean(score_rcs_lambda_derivative(y[ev], t[ev], d[ev], params, NuisanceAt(ell=ell, g=g))))
        g_lams.append(g_lam)
        infl = terms - theta - theta / p_k * (d[ev] - p_k) + g_lam * (t[ev] - lam_k)
        fold_var.append(np.mean(infl ** 2))
    sigma = _combine(fold_var, sizes)
    diag["fold_sizes"] = sizes
    diag["g_lambda_per_fold"] = g_lams
    return AttResult(theta, sigma, data.n, np.array(thetas), np.array(sizes), np.array(p_hats),
                     np.array(lam_hats), "orthogonal", diag)


def _class_probs(spec: EstimatorSpec, x_fit, w_fit, x_eval, target, seed, diag):
    try:
        model = fit_class_probabilities(spec.propensity_learner.with_seed(seed), x_fit, w_fit)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise EstimationError(f"propensity learner failed: {exc}") from exc
    _note_fit(model, diag, "propensity")
    probs = model.predict_proba(x_eval)
    g_w, c1 = _clip(probs[:, target], spec.clip)
    g_z, c2 = _clip(probs[:, 0], spec.clip)
    diag["clipped"] += c1 + c2
    return g_w, g_z


def estimate_multi(data: MultilevelData, spec: EstimatorSpec,
                   folds: FoldPlan | None = None) -> AttResult:
    """Cross-fitted orthogonal ATT of level ``spec.target_level`` against level 0."""
    target = spec.target_level
    if not 1 <= target <= data.levels:
        raise EstimationError(f"target level {target} not in 1..{data.levels}")
    x, w, dy = data.x.values, data.w, data.delta_y
    n_levels = data.levels + 1
    diag = _new_diag()

    def valid(aux):
        counts = np.bincount(w[aux], minlength=n_levels)
        return bool(np.all(counts > 0)) and counts[0] >= 2

    thetas, sizes, p_hats, parts = [], [], [], []
    for k, (ev, aux) in enumerate(_splits(data.n, spec, valid, folds, diag)):
        seed = learner_seed(spec.seed, k)
        is_t = (w == target).astype(float)
        p_k = float(is_t[aux].mean())
        g_w, g_z = _class_probs(spec, x[aux], w[aux], x[ev], target, seed, diag)
        ctrl = aux[w[aux] == 0]
        ell = _predict(_fit_outcome(spec, x[ctrl], dy[ctrl], seed, diag), x[ev], diag)
        is_0 = (w[ev] == 0).astype(float)
        terms = (is_t[ev] * g_z - is_0 * g_w) / (p_k * g_z) * (dy[ev] - ell)
        thetas.append(float(terms.mean()))
        sizes.append(ev.size)
        p_hats.append(p_k)
        parts.append((terms, is_t[ev], p_k))
    theta = _combine(thetas, sizes)
    fold_var = [np.mean((terms - theta - theta / p_k * (it - p_k)) ** 2) for terms, it, p_k in parts]
    sigma = _combine(fold_var, sizes)
    diag["fold_sizes"] = sizes
    diag["target_level"] = target
    return AttResult(theta, sigma, data.n, np.array(thetas), np.array(sizes), np.array(p_hats),
                     None, "orthogonal", diag)


def estimate_conventional(data, spec: EstimatorSpec) -> AttResult:
    """Full-sample inverse-propensity DID estimate without adjustment or cross-fitting.

    The reported variance is the plain sample variance of the plugged-in
    score; it ignores first-stage estimation and is flagged as naive.
    """
    n = data.n
    x = data.x.values
    diag = _new_diag()
    diag["variance"] = "naive"
    seed = learner_seed(spec.seed, 0)
    lam_hat = None
    if isinstance(data, MultilevelData):
        target = spec.target_level
        if not 1 <= target <= data.levels:
            raise EstimationError(f"target level {target} not in 1..{data.levels}")
        w = data.w
        is_t = (w == target).astype(float)
        p_hat = float(is_t.mean())
        g_w, g_z = _class_probs(spec, x, w, x, target, seed, diag)
        is_0 = (w == 0).astype(float)
        contrib = data.delta_y * (is_t * g_z - is_0 * g_w) / (p_hat * g_z)
        diag["target_level"] = target
    else:
        d = data.d.astype(float)
        p_hat = float(d.mean())
        g, clipped = _clip(_predict(_fit_binary(spec, x, d, seed, diag), x, diag), spec.clip)
        diag["clipped"] += clipped
        if isinstance(data, RepeatedOutcomesData):
            contrib = data.delta_y / p_hat * (d - g) / (1.0 - g)
        else:
            t = data.t.astype(float)
            lam_hat = float(t.mean())
            contrib = (t - lam_hat) / (lam_hat * (1.0 - lam_hat)) * data.y / p_hat * (d - g) / (1.0 - g)
    theta = float(contrib.mean())
    sigma = float(contrib.var(ddof=1))
    lam_arr = None if lam_hat is None else np.array([lam_hat])
    return AttResult(theta, sigma, n, np.array([theta]), np.array([n]), np.array([p_hat]),
                     lam_arr, "conventional", diag)


def estimate(data, spec: EstimatorSpec, folds: FoldPlan | None = None) -> AttResult:
    """Dispatch to the orthogonal estimator matching the dataset's design."""
    if isinstance(data, RepeatedOutcomesData):
        return estimate_ro(data, _check_design(spec, "ro"), folds)
    if isinstance(data, RepeatedCrossSectionData):
        return estimate_rcs(data, _check_design(spec, "rcs"), folds)
    if isinstance(data, MultilevelData):
        return estimate_multi(data, _check_design(spec, "multi"), folds)
    raise TypeError(f"unsupported dataset type {type(data).__name__}")


def _check_design(spec: EstimatorSpec, design: str) -> EstimatorSpec:
    if spec.design != design:
        raise EstimationError(f"estimator configured for {spec.design!r} but data is {design!r}")
    return spec


def with_seed(spec: EstimatorSpec, seed: int) -> EstimatorSpec:
    return replace(spec, seed=int(seed))
