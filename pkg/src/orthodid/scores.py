"""Pointwise DID score functions and a numerical Neyman-orthogonality probe.

All functions broadcast over numpy arrays, so the same call evaluates one
observation or a whole sample.

For each design the orthogonal score equals the conventional (inverse
propensity weighted) score minus an adjustment term with mean zero at the
true nuisances::

    orthogonal = conventional - adjustment
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class ScoreParams:
    """Finite-dimensional parameters: candidate ATT, treated share, post-period share."""

    theta: float
    p: float
    lam: float = 0.5

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError(f"treated share must lie in (0, 1), got {self.p}")
        if not 0 < self.lam < 1:
            raise ValueError(f"post-period share must lie in (0, 1), got {self.lam}")


@dataclass(frozen=True)
class NuisanceAt:
    """Nuisance values at the observations' covariates.

    ``g`` is the propensity P(D=1|X) (binary designs); ``g_w`` and ``g_z``
    are P(W=target|X) and P(W=0|X) (multilevel design); ``ell`` is the
    conditional-mean nuisance of the design among untreated units.
    """

    ell: np.ndarray | float = 0.0
    g: np.ndarray | float | None = None
    g_w: np.ndarray | float | None = None
    g_z: np.ndarray | float | None = None


# repeated outcomes --------------------------------------------------------

def _ipw_ro(d, p, g):
    return (d - g) / (p * (1.0 - g))


def score_ro_orthogonal(delta_y, d, params: ScoreParams, nu: NuisanceAt):
    return _ipw_ro(d, params.p, nu.g) * (delta_y - nu.ell) - params.theta


def score_ro_conventional(delta_y, d, params: ScoreParams, nu: NuisanceAt):
    return delta_y / params.p * (d - nu.g) / (1.0 - nu.g) - params.theta


def adjustment_ro(d, params: ScoreParams, nu: NuisanceAt):
    return _ipw_ro(d, params.p, nu.g) * nu.ell


def score_ro_expanded(delta_y, d, params: ScoreParams, nu: NuisanceAt):
    """Orthogonal score written as main term - theta - adjustment."""
    return score_ro_conventional(delta_y, d, params, nu) - adjustment_ro(d, params, nu)


# repeated cross sections ---------------------------------------------------

def _ipw_rcs(d, p, lam, g):
    return (d - g) / (p * lam * (1.0 - lam) * (1.0 - g))


def score_rcs_orthogonal(y, t, d, params: ScoreParams, nu: NuisanceAt):
    lam = params.lam
    return _ipw_rcs(d, params.p, lam, nu.g) * ((t - lam) * y - nu.ell) - params.theta


def score_rcs_conventional(y, t, d, params: ScoreParams, nu: NuisanceAt):
    lam = params.lam
    return ((t - lam) / (lam * (1.0 - lam)) * y / params.p * (d - nu.g) / (1.0 - nu.g)
            - params.theta)


def adjustment_rcs(d, params: ScoreParams, nu: NuisanceAt):
    return _ipw_rcs(d, params.p, params.lam, nu.g) * nu.ell


def score_rcs_expanded(y, t, d, params: ScoreParams, nu: NuisanceAt):
    return score_rcs_conventional(y, t, d, params, nu) - adjustment_rcs(d, params, nu)


def score_rcs_lambda_derivative(y, t, d, params: ScoreParams, nu: NuisanceAt):
    """Derivative of the orthogonal cross-section score in the post-period share.

    The nuisance ``ell`` is held fixed. Averaging over a fold gives the
    plug-in estimate of the Jacobian term used by the variance estimator.
    """
    lam, p, g = params.lam, params.p, nu.g
    ratio = (d - g) / (1.0 - g)
    first = -(1.0 - 2.0 * lam) / (lam ** 2 * (1.0 - lam) ** 2) * ratio / p * ((t - lam) * y - nu.ell)
    second = -y / (p * lam * (1.0 - lam)) * ratio
    return first + second


# multilevel treatment -----------------------------------------------------

def _ipw_multi(w, target, p, g_w, g_z):
    is_t = (np.asarray(w) == target).astype(float)
    is_0 = (np.asarray(w) == 0).astype(float)
    return (is_t * g_z - is_0 * g_w) / (p * g_z)


def score_multi_orthogonal(delta_y, w, target_w, params: ScoreParams, nu: NuisanceAt):
    return _ipw_multi(w, target_w, params.p, nu.g_w, nu.g_z) * (delta_y - nu.ell) - params.theta


def score_multi_conventional(delta_y, w, target_w, params: ScoreParams, nu: NuisanceAt):
    return delta_y * _ipw_multi(w, target_w, params.p, nu.g_w, nu.g_z) - params.theta


def adjustment_multi(w, target_w, params: ScoreParams, nu: NuisanceAt):
    return _ipw_multi(w, target_w, params.p, nu.g_w, nu.g_z) * nu.ell


def score_multi_expanded(delta_y, w, target_w, params: ScoreParams, nu: NuisanceAt):
    return (score_multi_conventional(delta_y, w, target_w, params, nu)
            - adjustment_multi(w, target_w, params, nu))


def score_conventional(design: str, obs: dict, params: ScoreParams, nu: NuisanceAt):
    """Conventional score for ``design``; ``obs`` holds the design's observation fields.

    ro: delta_y, d. rcs: y, t, d. multi: delta_y, w, target.
    """
    if design == "ro":
        return score_ro_conventional(obs["delta_y"], obs["d"], params, nu)
    if design == "rcs":
        return score_rcs_conventional(obs["y"], obs["t"], obs["d"], params, nu)
    if design == "multi":
        return score_multi_conventional(obs["delta_y"], obs["w"], obs["target"], params, nu)
    raise ValueError(f"unknown design {design!r}")


def score_orthogonal(design: str, obs: dict, params: ScoreParams, nu: NuisanceAt):
    if design == "ro":
        return score_ro_orthogonal(obs["delta_y"], obs["d"], params, nu)
    if design == "rcs":
        return score_rcs_orthogonal(obs["y"], obs["t"], obs["d"], params, nu)
    if design == "multi":
        return score_multi_orthogonal(obs["delta_y"], obs["w"], obs["target"], params, nu)
    raise ValueError(f"unknown design {design!r}")


def adjustment(design: str, obs: dict, params: ScoreParams, nu: NuisanceAt):
    if design == "ro":
        return adjustment_ro(obs["d"], params, nu)
    if design == "rcs":
        return adjustment_rcs(obs["d"], params, nu)
    if design == "multi":
        return adjustment_multi(obs["w"], obs["target"], params, nu)
    raise ValueError(f"unknown design {design!r}")


# orthogonality probe ------------------------------------------------------

MIN_PROBE_POPULATION = 10_000
DEFAULT_R_GRID = tuple(np.round(np.arange(0, 0.1001, 0.01), 10))


@dataclass(frozen=True)
class Population:
    """A large sample together with the true parameters and nuisances at each row."""

    design: str
    obs: dict
    x: np.ndarray
    params: ScoreParams
    truth: NuisanceAt


@dataclass(frozen=True)
class Direction:
    """Alternative nuisance values: callables mapping (x, true nuisances) to perturbed ones."""

    g: Callable | None = None
    ell: Callable | None = None
    g_w: Callable | None = None
    g_z: Callable | None = None

    def apply(self, x, truth: NuisanceAt) -> NuisanceAt:
        def pick(name):
            fn = getattr(self, name)
            base = getattr(truth, name)
            return base if fn is None or base is None else fn(x, base)

        return NuisanceAt(ell=pick("ell"), g=pick("g"), g_w=pick("g_w"), g_z=pick("g_z"))


@dataclass(frozen=True)
class ProbeResult:
    r: np.ndarray
    m_orthogonal: np.ndarray
    m_conventional: np.ndarray
    derivative_orthogonal: float
    derivative_conventional: float
    step: float = 0.01
    meta: dict = field(default_factory=dict)

    def records(self) -> list[dict]:
        return [
            {"r": float(r), "M_orthogonal": float(mo), "M_conventional": float(mc)}
            for r, mo, mc in zip(self.r, self.m_orthogonal, self.m_conventional)
        ]


def _mix(truth: NuisanceAt, other: NuisanceAt, r: float) -> NuisanceAt:
    def lerp(a, b):
        if a is None:
            return None
        return a + r * (b - a)

    return NuisanceAt(ell=lerp(truth.ell, other.ell), g=lerp(truth.g, other.g),
                      g_w=lerp(truth.g_w, other.g_w), g_z=lerp(truth.g_z, other.g_z))


def orthogonality_probe(population: Population, direction: Direction,
                        r_grid=DEFAULT_R_GRID, step: float = 0.01) -> ProbeResult:
    """Directional derivative at r=0 of the mean score along eta0 + r (eta - eta0).

    The mean score M(r) is evaluated over the population on ``r_grid`` for
    the orthogonal and conventional scores; the derivative at zero is the
    central difference (M(step) - M(-step)) / (2 step).
    """
    n = population.x.shape[0]
    if n < MIN_PROBE_POPULATION:
        raise ValueError(f"population of {n} is below the minimum of {MIN_PROBE_POPULATION}")
    design, obs, params, truth = population.design, population.obs, population.params, population.truth
    other = direction.apply(population.x, truth)

    def curve(score, r):
        return float(np.mean(score(design, obs, params, _mix(truth, other, r))))

    r_grid = np.asarray(r_grid, dtype=float)
    m_orth = np.array([curve(score_orthogonal, r) for r in r_grid])
    m_conv = np.array([curve(score_conventional, r) for r in r_grid])
    d_orth = (curve(score_orthogonal, step) - curve(score_orthogonal, -step)) / (2 * step)
    d_conv = (curve(score_conventional, step) - curve(score_conventional, -step)) / (2 * step)
    return ProbeResult(r_grid, m_orth, m_conv, d_orth, d_conv, step, {"n": n, "design": design})
