from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from globalqr.core import (
    Column,
    CurveSet,
    Dataset,
    QuantileGrid,
    assemble_test_vector,
    build_design,
    disassemble_test_vector,
)
from globalqr.errors import (
    DataError,
    DimensionMismatch,
    EmptyInteresting,
    InvalidTau,
    MissingValues,
    RankDeficientNuisance,
)


def test_minimal_model_design():
    ds = Dataset.from_arrays([1.0, 2.0, 4.0], {"x": [0.5, 1.5, 3.0]})
    des = build_design(ds)
    assert des.p == 1 and des.q == 1
    np.testing.assert_array_equal(des.X[:, 0], [0.5, 1.5, 3.0])
    np.testing.assert_array_equal(des.Z[:, 0], 1.0)
    assert des.z_labels == ("(Intercept)",)


def test_reference_coding_three_levels():
    ds = Dataset.from_arrays(np.arange(6.0), {"g": list("CABBAC")}, categorical=["g"])
    des = build_design(ds)
    assert des.p == 2
    assert des.x_labels == ("g[B]", "g[C]")
    np.testing.assert_array_equal(des.X[:, 0], [0, 0, 1, 1, 0, 0])
    np.testing.assert_array_equal(des.X[:, 1], [1, 0, 0, 0, 0, 1])


def test_two_categorical_nuisance_columns():
    n = 12
    ds = Dataset.from_arrays(
        np.arange(n, dtype=float),
        {"x": np.linspace(0, 1, n)},
        {"a": ["u", "v", "w"] * 4, "b": ["p"] * 6 + ["q"] * 6},
        categorical=["a", "b"],
    )
    assert build_design(ds).q == 1 + 2 + 1


def test_dummy_rows_sum_to_zero_or_one():
    g = np.array(list("ABCABCCBA"))
    ds = Dataset.from_arrays(np.arange(9.0), {"g": g}, categorical=["g"])
    X = build_design(ds).X
    sums = X.sum(axis=1)
    assert set(sums) <= {0.0, 1.0}
    np.testing.assert_array_equal(sums == 0, g == "A")


def test_row_permutation_permutes_design(rng):
    n = 10
    ds = Dataset.from_arrays(rng.normal(size=n), {"x": rng.normal(size=n)},
                             {"g": list("abab" * 2 + "ab")}, categorical=["g"])
    perm = rng.permutation(n)
    a, b = build_design(ds), build_design(ds.permute_rows(perm))
    np.testing.assert_array_equal(a.X[perm], b.X)
    np.testing.assert_array_equal(a.Z[perm], b.Z)
    assert a.x_labels == b.x_labels and a.z_labels == b.z_labels


def test_rank_deficient_nuisance_rejected():
    x = np.arange(6.0)
    ds = Dataset.from_arrays(x, {"x": x}, {"z1": x, "z2": 2 * x})
    with pytest.raises(RankDeficientNuisance):
        build_design(ds)


def test_empty_interesting_rejected():
    ds = Dataset(np.arange(3.0), {"z": Column("z", np.arange(3.0))}, (), ("z",))
    with pytest.raises(EmptyInteresting):
        build_design(ds)


@pytest.mark.parametrize("bad", [
    dict(y=[1.0, np.nan, 2.0], x=[1.0, 2.0, 3.0]),
    dict(y=[1.0, 2.0, 3.0], x=[1.0, np.inf, 3.0]),
])
def test_missing_values_rejected(bad):
    with pytest.raises(MissingValues):
        Dataset.from_arrays(bad["y"], {"x": bad["x"]})


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset.from_arrays([1.0], {"x": [1.0]})
    with pytest.raises(DimensionMismatch):
        Dataset.from_arrays([1.0, 2.0], {"x": [1.0, 2.0, 3.0]})
    with pytest.raises(DataError):
        Dataset.from_arrays([1.0, 2.0], {"g": ["a", "a"]}, categorical=["g"])


def test_quantile_grid():
    g = QuantileGrid.parse("10@0.01:0.99")
    assert g.d == 10 and g.taus[0] == 0.01 and g.taus[-1] == 0.99
    np.testing.assert_allclose(np.diff(g.taus), 0.98 / 9)
    assert QuantileGrid.parse("0.25, 0.5,0.75").taus.tolist() == [0.25, 0.5, 0.75]
    for bad in ([0.5, 0.5], [0.0, 0.5], [0.5, 1.0], [0.7, 0.3], []):
        with pytest.raises(InvalidTau):
            QuantileGrid(bad)


def test_assemble_layout():
    np.testing.assert_array_equal(assemble_test_vector([[1, 2], [3, 4]]), [1, 2, 3, 4])
    curve = np.linspace(0, 1, 7)
    np.testing.assert_array_equal(assemble_test_vector(curve[None, :]), curve)
    beta = np.arange(30.0).reshape(3, 10)
    v = assemble_test_vector(beta)
    assert len(v) == 30
    np.testing.assert_array_equal(v[10:20], beta[1])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_assemble_bijection(p, d, seed):
    beta = np.random.default_rng(seed).normal(size=(p, d))
    v = assemble_test_vector(beta)
    np.testing.assert_array_equal(disassemble_test_vector(v, p, d), beta)
    np.testing.assert_array_equal(assemble_test_vector(disassemble_test_vector(v, p, d)), v)


def test_curveset_checks():
    cs = CurveSet(np.zeros((5, 6)), p=2, d=3)
    assert cs.s == 4 and cs.column(1, 2) == 5
    with pytest.raises(DataError):
        CurveSet(np.zeros((1, 6)))
    with pytest.raises(DataError):
        CurveSet(np.zeros((3, 5)), p=2, d=3)
