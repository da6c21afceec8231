"""Data model: datasets, quantile grids, design matrices and test vectors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DataError,
    DimensionMismatch,
    EmptyInteresting,
    InvalidTau,
    MissingValues,
    RankDeficientNuisance,
)

RANK_TOL = 1e-10


@dataclass(frozen=True)
class Column:
    name: str
    values: np.ndarray
    categorical: bool = False

    @property
    def levels(self) -> list[str]:
        if not self.categorical:
            return []
        return sorted({str(v) for v in self.values})


@dataclass(frozen=True)
class Dataset:
    """Response plus named covariate columns split into interesting/nuisance."""

    y: np.ndarray
    columns: Mapping[str, Column]
    interesting: tuple[str, ...]
    nuisance: tuple[str, ...] = ()
    response_name: str = "y"

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "interesting", tuple(self.interesting))
        object.__setattr__(self, "nuisance", tuple(self.nuisance))
        n = len(y)
        if y.ndim != 1 or n < 2:
            raise DataError("need a response vector with at least 2 observations")
        if not np.all(np.isfinite(y)):
            raise MissingValues(f"response '{self.response_name}' has missing values")
        for name in self.interesting + self.nuisance:
            if name not in self.columns:
                raise DataError(f"unknown column '{name}'")
        if set(self.interesting) & set(self.nuisance):
            raise DataError("a column cannot be both interesting and nuisance")
        for col in self.columns.values():
            if len(col.values) != n:
                raise DimensionMismatch(
                    f"column '{col.name}' has {len(col.values)} rows, expected {n}"
                )
            if col.categorical:
                vals = np.asarray(col.values, dtype=object)
                if any(v is None or (isinstance(v, float) and np.isnan(v)) or v == ""
                       for v in vals):
                    raise MissingValues(f"column '{col.name}' has missing values")
                if len(col.levels) < 2:
                    raise DataError(f"categorical column '{col.name}' has < 2 levels")
            elif not np.all(np.isfinite(np.asarray(col.values, dtype=float))):
                raise MissingValues(f"column '{col.name}' has missing values")

    @property
    def n(self) -> int:
        return len(self.y)

    @classmethod
    def from_arrays(
        cls,
        y,
        interesting: Mapping[str, Sequence],
        nuisance: Mapping[str, Sequence] | None = None,
        categorical: Sequence[str] = (),
    ) -> "Dataset":
        """Convenience constructor from plain arrays keyed by column name."""
        nuisance = nuisance or {}
        cols = {}
        for name, vals in {**interesting, **nuisance}.items():
            cat = name in categorical
            arr = np.asarray(vals, dtype=object if cat else float)
            if cat:
                arr = np.array([_level_label(v) for v in arr], dtype=object)
            cols[name] = Column(name, arr, cat)
        return cls(np.asarray(y, dtype=float), cols, tuple(interesting), tuple(nuisance))

    def permute_rows(self, perm) -> "Dataset":
        perm = np.asarray(perm)
        cols = {k: Column(c.name, c.values[perm], c.categorical) for k, c in self.columns.items()}
        return Dataset(self.y[perm], cols, self.interesting, self.nuisance, self.response_name)

    def nuisance_groups(self) -> np.ndarray:
        """Group label per row: the level combination of all nuisance columns."""
        keys = [tuple(str(self.columns[c].values[i]) for c in self.nuisance)
                for i in range(self.n)]
        uniq = {k: g for g, k in enumerate(sorted(set(keys)))}
        return np.array([uniq[k] for k in keys], dtype=np.int64)


def _level_label(v) -> str:
    if isinstance(v, (float, np.floating)) and float(v).is_integer():
        return str(int(v))
    return str(v)


@dataclass(frozen=True)
class QuantileGrid:
    taus: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.taus, dtype=float))
        if t.ndim != 1 or len(t) < 1:
            raise InvalidTau("quantile grid must be a non-empty vector")
        if np.any(t <= 0) or np.any(t >= 1):
            raise InvalidTau(f"every tau must lie in (0, 1): {t}")
        if np.any(np.diff(t) <= 0):
            raise InvalidTau("quantile grid must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "taus", t)

    @property
    def d(self) -> int:
        return len(self.taus)

    @classmethod
    def linspace(cls, d: int, lo: float = 0.01, hi: float = 0.99) -> "QuantileGrid":
        return cls(np.linspace(lo, hi, d) if d > 1 else np.array([lo]))

    @classmethod
    def parse(cls, spec: str) -> "QuantileGrid":
        """``"0.1,0.5,0.9"`` or ``"d@lo:hi"`` (d equally spaced, inclusive)."""
        spec = spec.strip()
        try:
            if "@" in spec:
                d, rng = spec.split("@")
                lo, hi = rng.split(":")
                return cls.linspace(int(d), float(lo), float(hi))
            return cls(np.array([float(s) for s in spec.split(",") if s.strip()]))
        except ValueError as exc:
            raise InvalidTau(f"cannot parse tau specification '{spec}'") from exc


@dataclass(frozen=True)
class DesignMatrices:
    X: np.ndarray
    Z: np.ndarray
    x_labels: tuple[str, ...]
    z_labels: tuple[str, ...]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Z.shape[1]

    @property
    def full(self) -> np.ndarray:
        """Full-model design with the interesting columns first."""
        return np.hstack([self.X, self.Z])


def _encode(col: Column) -> tuple[np.ndarray, list[str]]:
    if not col.categorical:
        return np.asarray(col.values, dtype=float)[:, None], [col.name]
    levels = col.levels
    vals = np.array([str(v) for v in col.values])
    mats = [(vals == lev).astype(float) for lev in levels[1:]]
    return np.column_stack(mats), [f"{col.name}[{lev}]" for lev in levels[1:]]


def build_design(dataset: Dataset) -> DesignMatrices:
    """Reference-coded X and intercept-led Z for a dataset."""
    if not dataset.interesting:
        raise EmptyInteresting("at least one interesting covariate is required")
    n = dataset.n
    xs, xl = [], []
    for name in dataset.interesting:
        m, labels = _encode(dataset.columns[name])
        xs.append(m)
        xl += labels
    zs, zl = [np.ones((n, 1))], ["(Intercept)"]
    for name in dataset.nuisance:
        m, labels = _encode(dataset.columns[name])
        zs.append(m)
        zl += labels
    Z = np.hstack(zs)
    sv = np.linalg.svd(Z, compute_uv=False)
    if sv[-1] <= RANK_TOL * sv[0]:
        raise RankDeficientNuisance("nuisance design is rank deficient")
    X = np.hstack(xs)
    for arr in (X, Z):
        arr.setflags(write=False)
    return DesignMatrices(X, Z, tuple(xl), tuple(zl))


def assemble_test_vector(beta_by_tau) -> np.ndarray:
    """Flatten a p x d coefficient matrix coefficient-major: beta_1(.), beta_2(.), ..."""
    b = np.asarray(beta_by_tau, dtype=float)
    if b.ndim != 2:
        raise DimensionMismatch(f"expected a p x d matrix, got shape {b.shape}")
    return b.reshape(-1).copy()


def disassemble_test_vector(vec, p: int, d: int) -> np.ndarray:
    v = np.asarray(vec, dtype=float)
    if v.shape != (p * d,):
        raise DimensionMismatch(f"vector of length {v.size} is not {p} x {d}")
    return v.reshape(p, d).copy()


@dataclass(frozen=True)
class CurveSet:
    """Row 0 is the observed test vector, rows 1..s are null replicates."""

    curves: np.ndarray
    p: int = 1
    d: int = field(default=0)

    def __post_init__(self):
        c = np.asarray(self.curves, dtype=float)
        if c.ndim != 2 or c.shape[0] < 2:
            raise DimensionMismatch("a curve set needs an observed row and >= 1 replicate")
        d = self.d or c.shape[1] // self.p
        if self.p * d != c.shape[1]:
            raise DimensionMismatch(f"{c.shape[1]} columns is not p={self.p} times d")
        c.setflags(write=False)
        object.__setattr__(self, "curves", c)
        object.__setattr__(self, "d", d)

    @property
    def s(self) -> int:
        return self.curves.shape[0] - 1

    @property
    def observed(self) -> np.ndarray:
        return self.curves[0]

    def column(self, j: int, k: int) -> int:
        return j * self.d + k
