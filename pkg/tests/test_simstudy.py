from __future__ import annotations

import warnings

import numpy as np
import pytest
from scipy import stats

from globalqr.core import QuantileGrid
from globalqr.errors import InvalidParameters
from globalqr.simstudy import (
    NUISANCE_CASES,
    ExperimentId,
    correlation_formula,
    generate,
    run_study,
)

BIG = 100_000


def _gen(name, mode="null", N=BIG, seed=0, **kw):
    return generate(ExperimentId.parse(name, **kw), N, mode, np.random.default_rng(seed))


def _col(ds, name):
    return np.asarray(ds.columns[name].values, dtype=float)


def test_subcase_table():
    expected = {"a": ("unif", 0.0, 1.0), "b": ("unif", 1.0, 1.0),
                "c": ("bern", 0.0, 0.1), "d": ("bern", 0.1, 0.1)}
    assert NUISANCE_CASES == expected
    for sub, (_, a, b) in expected.items():
        e = ExperimentId.parse("I" + sub)
        assert (e.a, e.b) == (a, b)
    assert ExperimentId.parse("V-cat").name == "V-cat"
    assert ExperimentId.parse("VIIb").family == "VII"
    with pytest.raises(InvalidParameters):
        ExperimentId.parse("Ie")


def test_nuisance_distributions():
    z = _col(_gen("Ia"), "Z")
    assert 0 <= z.min() and z.max() <= 1.5
    assert set(np.unique(_col(_gen("Ic"), "Z"))) == {0.0, 1.0}


def test_exp_ia_unit_conditional_variance():
    ds = _gen("Ia")
    x, z = _col(ds, "X"), _col(ds, "Z")
    resid = ds.y - 1.0 * z
    for lo in (0.0, 0.5, 1.0):
        rows = (x == 0) & (z >= lo) & (z < lo + 0.5)
        assert np.var(resid[rows]) == pytest.approx(1.0, abs=0.05)


def test_exp_ii_branches():
    ds = _gen("IIa")
    z, z1 = _col(ds, "Z"), _col(ds, "Z1")
    keep = z >= z1
    assert np.mean(ds.y[keep]) == pytest.approx(0.0, abs=0.03)
    assert np.var(ds.y[keep]) == pytest.approx(1.0, abs=0.05)
    assert np.mean(ds.y[~keep]) == pytest.approx(1.0, abs=0.01)
    assert np.std(ds.y[~keep]) == pytest.approx(0.2, abs=0.01)


@pytest.mark.parametrize("c", [0.5])
def test_exp_vi_correlation(c):
    ds = _gen("VI", c=c)
    r = np.corrcoef(_col(ds, "X"), _col(ds, "Z"))[0, 1]
    assert correlation_formula(c) == pytest.approx(0.5)
    assert r == pytest.approx(correlation_formula(c), abs=0.01)


def test_correlation_formula_values():
    assert correlation_formula(0.0) == 0.0
    assert correlation_formula(1.0) == 1.0
    assert correlation_formula(0.3) == pytest.approx(0.09 / 0.58)


def test_exp_i_alternative_heavy_tails():
    ds = _gen("Ia", mode="alternative")
    x, z = _col(ds, "X"), _col(ds, "Z")
    yp = ds.y[x == 1] - z[x == 1]
    assert stats.kurtosis(yp) > 0


def test_exp_vii_viii_binary_x():
    for name in ("VIIa", "VIIb", "VIII"):
        for c in (0.0, 0.4, 0.9):
            x = _col(_gen(name, N=5000, c=c), "X")
            assert set(np.unique(x)) <= {0.0, 1.0}


def test_generator_determinism():
    a = _gen("IIIb", N=200, seed=42)
    b = _gen("IIIb", N=200, seed=42)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(_col(a, "X"), _col(b, "X"))


@pytest.mark.parametrize("name", ["Ia", "Ib", "Id", "IIa", "IIIb", "IVa", "V-cat", "VIIa",
                                  "VIII"])
def test_null_law_does_not_depend_on_x(name):
    ds = _gen(name)
    x = _col(ds, "X")
    lo = x <= np.median(x)
    if name.startswith("III") or name.startswith("IV"):
        lo = x <= 2
    stat = stats.ks_2samp(ds.y[lo], ds.y[~lo]).statistic
    n1, n2 = lo.sum(), (~lo).sum()
    crit = 1.628 * np.sqrt((n1 + n2) / (n1 * n2))  # 1% two-sample KS
    assert stat < crit


def test_null_law_exp_vi_given_z():
    ds = _gen("VI", c=0.7)
    x, z = _col(ds, "X"), _col(ds, "Z")
    u = stats.gamma.cdf(ds.y, 4.5, scale=1 + z)
    lo = x <= np.median(x)
    n1, n2 = lo.sum(), (~lo).sum()
    assert stats.ks_2samp(u[lo], u[~lo]).statistic < 1.628 * np.sqrt((n1 + n2) / (n1 * n2))


def test_alternative_changes_law():
    ds = _gen("V-cat", mode="alternative")
    x = _col(ds, "X")
    assert stats.ks_2samp(ds.y[x == 5.0], ds.y[x != 5.0]).pvalue < 1e-6


def test_run_study_empty():
    out = run_study([ExperimentId.parse("Ia")], ["RL"], [20], 0, 19, QuantileGrid([0.5]))
    assert out.rows == []
    assert out.to_csv().strip() == ",".join(out.FIELDS)


def test_run_study_rows_and_determinism():
    grid = QuantileGrid.linspace(3, 0.2, 0.8)
    args = ([ExperimentId.parse("Ic")], ["WN", "RL", "FLPLUS*", "PH", "NC"], [20, 30], 4, 19,
            grid)
    a = run_study(*args, seed=5, modes=("null", "power"))
    b = run_study(*args, seed=5, modes=("null", "power"))
    assert a.to_csv() == b.to_csv()
    assert len(a.rows) == 5 * 2 * 2
    assert {r.mode for r in a.rows} == {"null", "power"}
    for r in a.rows:
        assert 0.0 <= r.rate <= 1.0 and r.rejections <= r.replicates
        assert r.mc_se == pytest.approx(np.sqrt(r.rate * (1 - r.rate) / r.replicates))


def test_run_study_skips_wn_for_continuous_nuisance():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = run_study([ExperimentId.parse("Ia")], ["WN", "RQ"], [20], 2, 19,
                        QuantileGrid([0.5]))
    assert [r.strategy for r in out.rows] == ["RQ"]
    assert any("WN" in str(w.message) for w in caught)
