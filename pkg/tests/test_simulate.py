import csv
import json

import numpy as np
import pytest

from orthodid import simulate
from orthodid.crossfit import EstimationError
from orthodid.data import MultilevelData, RepeatedCrossSectionData, RepeatedOutcomesData
from orthodid.simulate import (
    DgpId,
    gamma0,
    generate_dataset,
    histogram,
    noise_sd,
    run_monte_carlo,
    summarize_estimates,
    true_theta,
    write_replicates_csv,
    write_summary_json,
)


def test_dgp_parse():
    assert DgpId.parse("RO_ML") is DgpId.RO_ML
    assert DgpId.parse("multi_kernel").design == "multi"
    assert not DgpId.RCS_KERNEL.is_ml
    with pytest.raises(ValueError):
        DgpId.parse("ro_forest")


def test_noise_modes():
    assert noise_sd("variance") == pytest.approx(np.sqrt(0.1))
    assert noise_sd("sd") == 0.1
    with pytest.raises(ValueError):
        noise_sd("other")


def test_true_theta():
    assert true_theta(DgpId.RO_ML) == 3.0
    assert true_theta(DgpId.MULTI_ML, 2) == 6.0
    assert true_theta(DgpId.MULTI_KERNEL, 1) == 3.0


def test_shapes_and_types():
    draw = generate_dataset(DgpId.RO_ML, 200, p=300, seed=0)
    assert isinstance(draw.data, RepeatedOutcomesData)
    assert draw.data.x.values.shape == (200, 300)
    assert 0 < draw.data.d.sum() < 200
    assert isinstance(generate_dataset(DgpId.RCS_ML, 50, p=5, seed=0).data, RepeatedCrossSectionData)
    kern = generate_dataset(DgpId.MULTI_KERNEL, 50, p=300, seed=0).data
    assert isinstance(kern, MultilevelData) and kern.x.p == 1


def test_ml_design_needs_five_covariates():
    with pytest.raises(ValueError):
        generate_dataset(DgpId.RO_ML, 10, p=4)


def test_seed_determinism():
    a = generate_dataset(DgpId.RCS_ML, 100, p=10, seed=5).data
    b = generate_dataset(DgpId.RCS_ML, 100, p=10, seed=5).data
    c = generate_dataset(DgpId.RCS_ML, 100, p=10, seed=6).data
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.x.values, b.x.values)
    assert not np.array_equal(a.y, c.y)


# moments at n = 1e5 ----------------------------------------------------------

@pytest.fixture(scope="module")
def big_ro():
    return generate_dataset(DgpId.RO_ML, 100_000, p=10, seed=1).data


def test_ro_ml_outcome_changes(big_ro):
    d = big_ro.d == 1
    assert big_ro.delta_y[d].mean() == pytest.approx(4.0, abs=0.02)
    assert big_ro.delta_y[~d].mean() == pytest.approx(1.0, abs=0.02)


def test_ro_ml_treated_share(big_ro):
    rng = np.random.default_rng(999)
    x = rng.standard_normal((1_000_000, 10))
    expected = np.mean(1.0 / (1.0 + np.exp(-x @ gamma0(10))))
    assert big_ro.d.mean() == pytest.approx(expected, abs=0.01)


def test_ro_ml_residual_variance(big_ro):
    d = big_ro.d == 1
    assert big_ro.delta_y[d].var() == pytest.approx(0.2, rel=0.1)
    assert big_ro.delta_y[~d].var() == pytest.approx(0.1, rel=0.1)


def test_sd_noise_mode_shrinks_errors():
    data = generate_dataset(DgpId.RO_ML, 100_000, p=10, seed=1, noise="sd").data
    assert data.delta_y[data.d == 1].var() == pytest.approx(0.02, rel=0.1)


def test_multi_ml_shares():
    data = generate_dataset(DgpId.MULTI_ML, 100_000, p=10, seed=2).data
    shares = np.bincount(data.w, minlength=3) / data.n
    np.testing.assert_allclose(shares, [0.3, 0.3, 0.4], atol=0.01)
    for level, effect in ((1, 3.0), (2, 6.0)):
        gap = data.delta_y[data.w == level].mean() - data.delta_y[data.w == 0].mean()
        assert gap == pytest.approx(effect, abs=0.02)


def test_rcs_ml_design():
    data = generate_dataset(DgpId.RCS_ML, 100_000, p=10, seed=3).data
    assert data.x.values.mean() == pytest.approx(0.3, abs=0.01)
    assert data.t.mean() == pytest.approx(0.5, abs=0.01)
    did = lambda dv: data.y[(data.d == dv) & (data.t == 1)].mean() - data.y[(data.d == dv) & (data.t == 0)].mean()  # noqa: E731
    assert did(1) - did(0) == pytest.approx(3.0, abs=0.03)


@pytest.mark.parametrize("dgp", [DgpId.RO_KERNEL, DgpId.RCS_KERNEL])
def test_kernel_designs(dgp):
    data = generate_dataset(dgp, 100_000, seed=4).data
    x = data.x.values[:, 0]
    assert data.d.mean() == pytest.approx(0.5, abs=0.01)
    assert x[data.d == 1].mean() == pytest.approx(1.0, abs=0.02)
    assert x[data.d == 0].mean() == pytest.approx(0.0, abs=0.02)


def test_kernel_untreated_trend_equals_covariate():
    data = generate_dataset(DgpId.RO_KERNEL, 100_000, seed=5).data
    ctrl = data.d == 0
    resid = data.delta_y[ctrl] - data.x.values[ctrl, 0]
    assert resid.mean() == pytest.approx(0.0, abs=0.01)
    assert resid.var() == pytest.approx(0.1, rel=0.1)


# summaries ---------------------------------------------------------------------

def test_summary_examples():
    s = summarize_estimates([3.0] * 4, [1.0] * 4, 3.0)
    assert s.bias == 0 and s.coverage_95 == 1.0
    s = summarize_estimates([2.0, 4.0], [10.0, 10.0], 3.0)
    assert s.bias == 0 and s.sd == pytest.approx(np.sqrt(2)) and s.coverage_95 == 1.0
    s = summarize_estimates([2.0, 4.0], [0.0, 0.0], 3.0)
    assert s.coverage_95 == 0.0


def test_summary_single_replication():
    s = summarize_estimates([2.5], [0.3], 3.0)
    assert s.degenerate and s.sd == 0.0 and s.mean == 2.5


def test_summary_rmse_identity():
    rng = np.random.default_rng(0)
    est = rng.normal(3.2, 0.5, 137)
    s = summarize_estimates(est, np.full(137, 0.5), 3.0)
    r = s.r
    assert abs(s.rmse ** 2 - (s.bias ** 2 + s.sd ** 2 * (r - 1) / r)) <= 1e-10


def test_summary_errors():
    with pytest.raises(ValueError):
        summarize_estimates([1.0, 2.0], [1.0], 0.0)
    with pytest.raises(ValueError):
        summarize_estimates([], [], 0.0)


def test_histogram():
    h = histogram(np.arange(100.0))
    assert len(h["edges"]) == 41 and sum(h["counts"]) == 100
    assert h["edges"][0] == 0.0 and h["edges"][-1] == 99.0
    assert len(histogram([1.0, 2.0], bins=7)["counts"]) == 7


# Monte Carlo runner --------------------------------------------------------------

def test_run_is_deterministic():
    a = run_monte_carlo(DgpId.RCS_KERNEL, n=120, r=4, seed=3, method="both")
    b = run_monte_carlo(DgpId.RCS_KERNEL, n=120, r=4, seed=3, method="both")
    for m in ("orthogonal", "conventional"):
        np.testing.assert_array_equal(a[m].estimates, b[m].estimates)
        assert a[m].to_dict() == b[m].to_dict()


def test_parallel_matches_serial():
    a = run_monte_carlo(DgpId.RO_KERNEL, n=120, r=6, seed=8, threads=1)
    b = run_monte_carlo(DgpId.RO_KERNEL, n=120, r=6, seed=8, threads=2)
    np.testing.assert_array_equal(a["orthogonal"].estimates, b["orthogonal"].estimates)


def test_replication_uses_offset_seed():
    run = run_monte_carlo(DgpId.RO_KERNEL, n=120, r=3, seed=10)
    from orthodid.crossfit import estimate

    draw = generate_dataset(DgpId.RO_KERNEL, 120, seed=12)
    single = estimate(draw.data, simulate.default_estimator(DgpId.RO_KERNEL, seed=12))
    assert run["orthogonal"].estimates[2] == single.theta_hat


def test_failed_replications_are_counted(monkeypatch):
    real = simulate.estimate

    def flaky(data, spec, folds=None):
        if spec.seed % 2:
            raise EstimationError("forced")
        return real(data, spec, folds)

    monkeypatch.setattr(simulate, "estimate", flaky)
    s = run_monte_carlo(DgpId.RO_KERNEL, n=100, r=5, seed=0)["orthogonal"]
    assert s.n_failed == 2 and s.r == 3
    np.testing.assert_array_equal(s.replicates, [0, 2, 4])
    monkeypatch.setattr(simulate, "estimate", lambda *a, **k: (_ for _ in ()).throw(EstimationError("x")))
    with pytest.raises(EstimationError, match="all 2 replications failed"):
        run_monte_carlo(DgpId.RO_KERNEL, n=100, r=2, seed=0)


def test_runner_validation():
    with pytest.raises(ValueError):
        run_monte_carlo(DgpId.RO_KERNEL, r=0)
    with pytest.raises(ValueError):
        run_monte_carlo(DgpId.RO_KERNEL, method="both ways")


def test_exports(tmp_path):
    s = run_monte_carlo(DgpId.RCS_KERNEL, n=100, r=3, seed=1)["orthogonal"]
    path = tmp_path / "reps.csv"
    write_replicates_csv(path, s)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["replicate", "estimate", "se", "covered"]
    assert [float(r["estimate"]) for r in rows] == s.estimates.tolist()
    write_summary_json(tmp_path / "s.json", s.to_dict())
    assert json.loads((tmp_path / "s.json").read_text())["coverage_95"] == s.coverage_95
