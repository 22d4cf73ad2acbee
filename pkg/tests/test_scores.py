import numpy as np
import pytest

from orthodid.scores import (
    Direction,
    NuisanceAt,
    Population,
    ScoreParams,
    adjustment,
    orthogonality_probe,
    score_conventional,
    score_multi_expanded,
    score_multi_orthogonal,
    score_orthogonal,
    score_rcs_expanded,
    score_rcs_lambda_derivative,
    score_rcs_orthogonal,
    score_ro_conventional,
    score_ro_expanded,
    score_ro_orthogonal,
)
from orthodid.simulate import DgpId, probe_population, sine_direction


def test_score_params_validation():
    with pytest.raises(ValueError):
        ScoreParams(0.0, 1.0)
    with pytest.raises(ValueError):
        ScoreParams(0.0, 0.5, 0.0)


# worked examples -----------------------------------------------------------

def test_ro_examples():
    assert score_ro_orthogonal(3.0, 1, ScoreParams(3, 0.5), NuisanceAt(ell=0.0, g=0.5)) == pytest.approx(3.0)
    assert score_ro_orthogonal(4.0, 1, ScoreParams(0, 0.5), NuisanceAt(ell=1.0, g=0.2)) == pytest.approx(6.0)
    assert score_ro_orthogonal(2.7, 0, ScoreParams(1.3, 0.4), NuisanceAt(ell=2.7, g=0.6)) == pytest.approx(-1.3)


def test_rcs_examples():
    params = ScoreParams(0, 0.5, 0.5)
    assert score_rcs_orthogonal(2.0, 1, 1, params, NuisanceAt(ell=0.0, g=0.5)) == pytest.approx(8.0)
    params = ScoreParams(2.5, 0.3, 0.4)
    for t in (0, 1):
        ell = (t - 0.4) * 1.7
        assert score_rcs_orthogonal(1.7, t, 0, params, NuisanceAt(ell=ell, g=0.3)) == pytest.approx(-2.5)
        for d in (0, 1):
            assert score_rcs_orthogonal(0.0, t, d, params, NuisanceAt(ell=0.0, g=0.3)) == pytest.approx(-2.5)


def test_multi_examples():
    nu = NuisanceAt(ell=0.0, g_w=0.4, g_z=0.3)
    assert score_multi_orthogonal(6.0, 2, 2, ScoreParams(6, 0.4), nu) == pytest.approx(9.0)
    assert score_multi_orthogonal(6.0, 1, 2, ScoreParams(6, 0.4), nu) == pytest.approx(-6.0)
    nu = NuisanceAt(ell=1.1, g_w=0.4, g_z=0.3)
    assert score_multi_orthogonal(1.1, 0, 2, ScoreParams(6, 0.4), nu) == pytest.approx(-6.0)


def test_conventional_examples():
    assert score_ro_conventional(3.0, 1, ScoreParams(3, 0.5), NuisanceAt(g=0.5)) == pytest.approx(3.0)
    assert score_ro_conventional(0.0, 0, ScoreParams(3, 0.5), NuisanceAt(g=0.7)) == pytest.approx(-3.0)


def test_lambda_derivative_examples():
    params = ScoreParams(1.0, 0.4, 0.5)
    nu = NuisanceAt(ell=0.9, g=0.3)
    for d in (0, 1):
        for t in (0, 1):
            got = score_rcs_lambda_derivative(2.0, t, d, params, nu)
            assert got == pytest.approx(-2.0 * (d - 0.3) / (0.25 * 0.4 * 0.7))
    assert score_rcs_lambda_derivative(0.0, 1, 1, ScoreParams(1.0, 0.4, 0.3), NuisanceAt(ell=0.0, g=0.3)) == 0.0


# identities against the expanded forms ------------------------------------

def expanded_oracle(design, obs, params, nu):
    """Main identifying term minus theta minus the adjustment, written out directly."""
    theta, p, lam = params.theta, params.p, params.lam
    if design == "ro":
        d, g = obs["d"], nu.g
        main = obs["delta_y"] / p * (d - g) / (1 - g)
        c = (d - g) / (p * (1 - g)) * nu.ell
    elif design == "rcs":
        d, g, t, y = obs["d"], nu.g, obs["t"], obs["y"]
        main = (t - lam) / (lam * (1 - lam)) * y / p * (d - g) / (1 - g)
        c = (d - g) / (lam * (1 - lam) * p * (1 - g)) * nu.ell
    else:
        w, target = obs["w"], obs["target"]
        weight = (np.where(w == target, 1.0, 0.0) - np.where(w == 0, 1.0, 0.0) * nu.g_w / nu.g_z) / p
        main = obs["delta_y"] * weight
        c = weight * nu.ell
    return main - theta - c, c


def random_tuples(design, rng, m=10_000):
    g = rng.uniform(0.01, 0.99, m)
    params = ScoreParams(rng.normal() * 3, rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95))
    if design == "ro":
        obs = {"delta_y": rng.normal(size=m) * 5, "d": rng.integers(0, 2, m)}
        nu = NuisanceAt(ell=rng.normal(size=m) * 5, g=g)
    elif design == "rcs":
        obs = {"y": rng.normal(size=m) * 5, "t": rng.integers(0, 2, m), "d": rng.integers(0, 2, m)}
        nu = NuisanceAt(ell=rng.normal(size=m) * 5, g=g)
    else:
        obs = {"delta_y": rng.normal(size=m) * 5, "w": rng.integers(0, 4, m), "target": 2}
        nu = NuisanceAt(ell=rng.normal(size=m) * 5, g_w=g, g_z=rng.uniform(0.01, 0.99, m))
    return obs, params, nu


@pytest.mark.parametrize("design", ["ro", "rcs", "multi"])
def test_orthogonal_is_conventional_minus_adjustment(design):
    rng = np.random.default_rng({"ro": 1, "rcs": 2, "multi": 3}[design])
    for _ in range(5):
        obs, params, nu = random_tuples(design, rng)
        orth = score_orthogonal(design, obs, params, nu)
        conv = score_conventional(design, obs, params, nu)
        adj = adjustment(design, obs, params, nu)
        scale = 1 + np.abs(conv) + np.abs(adj)
        assert np.max(np.abs(orth - (conv - adj)) / scale) <= 1e-12
        oracle, c = expanded_oracle(design, obs, params, nu)
        assert np.max(np.abs(orth - oracle) / scale) <= 1e-12
        assert np.max(np.abs(adj - c) / scale) <= 1e-12


def test_expanded_functions_match_residual_form():
    rng = np.random.default_rng(4)
    obs, params, nu = random_tuples("ro", rng, 1000)
    np.testing.assert_allclose(score_ro_expanded(obs["delta_y"], obs["d"], params, nu),
                               score_ro_orthogonal(obs["delta_y"], obs["d"], params, nu),
                               rtol=1e-12, atol=1e-10)
    obs, params, nu = random_tuples("rcs", rng, 1000)
    np.testing.assert_allclose(score_rcs_expanded(obs["y"], obs["t"], obs["d"], params, nu),
                               score_rcs_orthogonal(obs["y"], obs["t"], obs["d"], params, nu),
                               rtol=1e-12, atol=1e-10)
    obs, params, nu = random_tuples("multi", rng, 1000)
    np.testing.assert_allclose(score_multi_expanded(obs["delta_y"], obs["w"], 2, params, nu),
                               score_multi_orthogonal(obs["delta_y"], obs["w"], 2, params, nu),
                               rtol=1e-12, atol=1e-10)


def test_other_levels_contribute_minus_theta():
    rng = np.random.default_rng(5)
    w = np.array([1, 3, 4, 1])
    nu = NuisanceAt(ell=rng.normal(size=4), g_w=rng.uniform(0.1, 0.9, 4), g_z=rng.uniform(0.1, 0.9, 4))
    out = score_multi_orthogonal(rng.normal(size=4), w, 2, ScoreParams(6.0, 0.3), nu)
    np.testing.assert_array_equal(out, -6.0)


# lambda derivative ----------------------------------------------------------

@pytest.mark.parametrize("lam", [0.3, 0.5, 0.62])
def test_lambda_derivative_central_difference(lam):
    rng = np.random.default_rng(6)
    n = 1000
    y, t, d = rng.normal(size=n) + 1, rng.integers(0, 2, n), rng.integers(0, 2, n)
    nu = NuisanceAt(ell=rng.normal(size=n) * 0.3, g=rng.uniform(0.1, 0.9, n))
    eps = 1e-5

    def mean_score(lv):
        return np.mean(score_rcs_orthogonal(y, t, d, ScoreParams(3.0, 0.45, lv), nu))

    numeric = (mean_score(lam + eps) - mean_score(lam - eps)) / (2 * eps)
    analytic = np.mean(score_rcs_lambda_derivative(y, t, d, ScoreParams(3.0, 0.45, lam), nu))
    assert abs(numeric - analytic) <= 1e-6 * max(1.0, abs(analytic))


# population properties -----------------------------------------------------

@pytest.fixture(scope="module")
def populations():
    return {dgp: probe_population(dgp, 100_000, p=20, seed=11)
            for dgp in (DgpId.RO_ML, DgpId.RCS_ML, DgpId.MULTI_ML,
                        DgpId.RO_KERNEL, DgpId.RCS_KERNEL, DgpId.MULTI_KERNEL)}


def within_three_se(values):
    values = np.asarray(values, dtype=float)
    se = values.std(ddof=1) / np.sqrt(values.size)
    return abs(values.mean()) <= 3 * se


@pytest.mark.parametrize("dgp", list(DgpId))
def test_adjustment_has_mean_zero_at_truth(populations, dgp):
    pop = populations[dgp]
    assert within_three_se(adjustment(pop.design, pop.obs, pop.params, pop.truth))


@pytest.mark.parametrize("dgp", list(DgpId))
def test_orthogonal_score_mean_zero_at_truth(populations, dgp):
    pop = populations[dgp]
    assert within_three_se(score_orthogonal(pop.design, pop.obs, pop.params, pop.truth))


def test_probe_example(populations):
    res = orthogonality_probe(populations[DgpId.RO_ML], sine_direction())
    assert abs(res.derivative_orthogonal) <= 0.02
    assert abs(res.derivative_conventional) >= 5 * abs(res.derivative_orthogonal)
    assert len(res.records()) == 11 and set(res.records()[0]) == {"r", "M_orthogonal", "M_conventional"}


@pytest.mark.parametrize("dgp", [DgpId.RO_ML, DgpId.RCS_KERNEL, DgpId.MULTI_KERNEL])
def test_probe_orthogonal_flatter_than_conventional(populations, dgp):
    res = orthogonality_probe(populations[dgp], sine_direction(0.08, 0.3))
    assert abs(res.derivative_orthogonal) < abs(res.derivative_conventional)


def test_zero_direction_gives_flat_curves(populations):
    res = orthogonality_probe(populations[DgpId.RO_ML], Direction())
    assert np.all(res.m_orthogonal == res.m_orthogonal[0])
    assert np.all(res.m_conventional == res.m_conventional[0])
    assert res.derivative_orthogonal == 0.0


def test_probe_rejects_small_population():
    x = np.zeros((100, 1))
    obs = {"delta_y": np.zeros(100), "d": np.arange(100) % 2}
    pop = Population("ro", obs, x, ScoreParams(3.0, 0.5), NuisanceAt(ell=0.0, g=0.5))
    with pytest.raises(ValueError, match="below the minimum"):
        orthogonality_probe(pop, Direction())
