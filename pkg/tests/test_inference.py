from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from globalqr.core import CurveSet, Dataset, QuantileGrid, build_design
from globalqr.envelope import Measure
from globalqr.inference import (
    TestConfig,
    comparators,
    global_test,
    observed_statistic,
    pointwise_perm_pvalues,
)
from globalqr.qr_solver import qr_fit
from oracles import pointwise_pvalues_counting

GRID = QuantileGrid([0.2, 0.5, 0.8])


def _dataset(rng, n=30, effect=0.0, categorical_nuisance=True):
    x = rng.normal(size=n)
    if categorical_nuisance:
        g = np.array(list("ab" * (n // 2)))
        y = rng.normal(size=n) + effect * x + (g == "b")
        return Dataset.from_arrays(y, {"x": x}, {"g": g}, categorical=["g"])
    z = rng.uniform(size=n)
    y = rng.normal(size=n) + effect * x + z
    return Dataset.from_arrays(y, {"x": x}, {"z": z})


def test_fl_recipe_is_full_model_slope(rng):
    n = 25
    x, y = rng.normal(size=n), rng.normal(size=n)
    ds = Dataset.from_arrays(y, {"x": x})
    vec = observed_statistic(ds, build_design(ds), GRID, "FL")
    X = np.column_stack([x, np.ones(n)])
    for k, tau in enumerate(GRID.taus):
        assert vec[k] == pytest.approx(qr_fit(X, y, tau).beta[0], abs=1e-10)


def test_rl_recipe_with_intercept_only_nuisance(rng):
    n = 25
    x, y = rng.normal(size=n), rng.normal(size=n)
    ds = Dataset.from_arrays(y, {"x": x})
    vec = observed_statistic(ds, build_design(ds), GRID, "RL")
    X = np.column_stack([np.ones(n), x])
    for k, tau in enumerate(GRID.taus):
        assert vec[k] == pytest.approx(qr_fit(X, y - y.mean(), tau).beta[1], abs=1e-10)


def test_rq_recipe_uses_matching_residuals():
    y = np.array([0.3, 2.0, -1.0, 4.0, 1.5, -0.5])
    x = np.array([1.0, 0.0, 2.0, 1.0, 3.0, 0.5])
    z = np.array([0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
    ds = Dataset.from_arrays(y, {"x": x}, {"z": z})
    grid = QuantileGrid([0.3, 0.7])
    Z = np.column_stack([np.ones(6), z])
    resid = [y - Z @ qr_fit(Z, y, t).beta for t in grid.taus]
    assert not np.allclose(resid[0], resid[1])
    vec = observed_statistic(ds, build_design(ds), grid, "RQ")
    X = np.column_stack([np.ones(6), x])
    for k, tau in enumerate(grid.taus):
        assert vec[k] == pytest.approx(qr_fit(X, resid[k], tau).beta[1], abs=1e-10)
        other = qr_fit(X, resid[1 - k], tau).beta[1]
        if not np.isclose(other, vec[k]):
            break
    else:
        pytest.fail("residual vectors did not influence the statistic")


@pytest.mark.parametrize("strategy", ["FL", "FLPLUS", "WN", "RL", "RLS", "RQ"])
def test_workers_do_not_change_result(rng, strategy):
    ds = _dataset(rng, n=24)
    a = global_test(ds, TestConfig(GRID, strategy, s=39, seed=7, workers=1))
    b = global_test(ds, TestConfig(GRID, strategy, s=39, seed=7, workers=8))
    np.testing.assert_array_equal(a.curves.curves, b.curves.curves)
    assert a.p_value == b.p_value
    assert a.comparator_p == b.comparator_p
    np.testing.assert_array_equal(a.envelope.outside_mask, b.envelope.outside_mask)


@pytest.mark.parametrize("strategy", ["FL", "WN", "RLS", "RQ"])
def test_significance_mask_matches_p_value(rng, strategy):
    for effect in (0.0, 0.5, 2.0):
        out = global_test(_dataset(rng, n=40, effect=effect),
                          TestConfig(GRID, strategy, s=99, seed=1))
        assert (out.p_value <= 0.05) == bool(out.significant_coordinates)
        assert out.comparator_p["NC"] <= out.comparator_p["PH"]
        assert len(out.envelope.lower) == len(out.coefficient_labels) == GRID.d


@pytest.mark.parametrize("strategy", ["FL", "WN"])
def test_scale_equivariance(rng, strategy):
    ds = _dataset(rng, n=30, effect=0.3)
    scaled = Dataset(ds.y * 3.5, ds.columns, ds.interesting, ds.nuisance)
    cfg = TestConfig(GRID, strategy, s=59, seed=4)
    a, b = global_test(ds, cfg), global_test(scaled, cfg)
    np.testing.assert_allclose(b.observed, 3.5 * a.observed, rtol=1e-9, atol=1e-12)
    assert a.p_value == b.p_value


def test_upper_tail_shift_in_one_level_is_localised():
    rng = np.random.default_rng(5)
    n_per = 250
    g = np.repeat(["A", "B", "C"], n_per)
    e = rng.normal(size=3 * n_per)
    cut = 0.6744897501960817  # standard normal 0.75 quantile
    y = np.where((g == "B") & (e > cut), e + 3.0, e)
    ds = Dataset.from_arrays(y, {"g": g}, categorical=["g"])
    grid = QuantileGrid([0.2, 0.4, 0.6, 0.8, 0.9])
    out = global_test(ds, TestConfig(grid, "WN", s=199, seed=2))
    assert out.envelope.rejected
    assert out.significant_coordinates == [("g[B]", 0.8), ("g[B]", 0.9)]


def test_pointwise_pvalues_examples():
    tied = np.ones((20, 2))
    np.testing.assert_array_equal(pointwise_perm_pvalues(tied), [1.0, 1.0])
    c = np.random.default_rng(0).normal(size=(20, 1))
    c[0, 0] = 50.0
    assert pointwise_perm_pvalues(c)[0] == pytest.approx(1 / 20)


def test_pointwise_pvalues_match_counting_oracle(rng):
    for _ in range(20):
        c = rng.normal(size=(6, 3))
        np.testing.assert_allclose(pointwise_perm_pvalues(CurveSet(c)),
                                   pointwise_pvalues_counting(c))


def test_comparator_examples(rng):
    assert comparators(np.ones((10, 4))) == (1.0, 1.0)
    c = rng.normal(size=(50, 1))
    p = pointwise_perm_pvalues(c)[0]
    assert comparators(c) == (p, p)
    # ten coordinates; coordinate 3 has the observed far out
    c = rng.normal(size=(200, 10))
    c[0] = 0.0
    c[0, 3] = 40.0
    p = pointwise_perm_pvalues(c)
    ph, nc = comparators(c)
    assert nc == p[3] == pytest.approx(1 / 200)
    assert ph == pytest.approx(min(1.0, 10 * p[3]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_nc_never_exceeds_ph(seed):
    c = np.random.default_rng(seed).normal(size=(30, 6))
    ph, nc = comparators(c)
    assert nc <= ph


def test_wn_exactness_small_monte_carlo():
    rng = np.random.default_rng(123)
    grid = QuantileGrid([0.25, 0.5, 0.75])
    rejections, runs = 0, 1000
    for r in range(runs):
        n = 16
        g = np.array(list("ab" * (n // 2)))
        y = rng.normal(size=n) + 2.0 * (g == "b")
        ds = Dataset.from_arrays(y, {"x": rng.normal(size=n)}, {"g": g}, categorical=["g"])
        out = global_test(ds, TestConfig(grid, "WN", s=19, seed=r))
        rejections += out.envelope.rejected
    assert 0.03 <= rejections / runs <= 0.08


def test_diagnostics_flag_extreme_tau(rng):
    ds = _dataset(rng, n=20)
    out = global_test(ds, TestConfig(QuantileGrid([0.01, 0.5]), "RQ", s=19, seed=0))
    assert any("extreme tau" in d for d in out.diagnostics)


def test_area_measure_runs(rng):
    out = global_test(_dataset(rng), TestConfig(GRID, "RL", s=49, measure=Measure.AREA))
    assert out.envelope.measure is Measure.AREA and 0 < out.p_value <= 1
