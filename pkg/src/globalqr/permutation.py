"""Null-model generation by permutation.

Each strategy is prepared once into a frozen :class:`NullModel`; replicate
``i`` is then drawn from a counter-based stream keyed by ``(seed, i)``, so
any replicate can be regenerated on its own, in any order, on any worker.

Strategies
----------
FL      Freedman-Lane: permute rows of the reduced-model residual matrix and
        add back the reduced quantile fits, one response per tau.
FLPLUS  FL, then drop the q-1 rows that carry the reduced fit's zero
        residuals at each tau (n - q + 1 rows remain).
WN      permute the response within each level combination of the
        (categorical) nuisance covariates.
RL      permute least-squares residuals of y on Z.
RLS     as RL, residuals divided by a least-squares fit of their absolute
        values on Z.
RQ      permute the per-tau quantile residuals of y on Z, with the same
        permutation for every tau.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Dataset, DesignMatrices, QuantileGrid
from .errors import DataError, IndexZeroReserved, WnNeedsCategorical
from .qr_solver import ols_fit, qr_fit_grid, zero_tolerance


class Strategy(str, enum.Enum):
    FL = "FL"
    FLPLUS = "FLPLUS"
    WN = "WN"
    RL = "RL"
    RLS = "RLS"
    RQ = "RQ"

    @classmethod
    def parse(cls, name) -> "Strategy":
        if isinstance(name, cls):
            return name
        key = str(name).upper().replace("+", "PLUS")
        try:
            return cls(key)
        except ValueError:
            raise DataError(f"unknown strategy '{name}'") from None

    @property
    def residual_stage(self) -> bool:
        """True if the test statistic is fitted on filtered residuals."""
        return self in (Strategy.RL, Strategy.RLS, Strategy.RQ)

    @property
    def per_tau_response(self) -> bool:
        return self in (Strategy.FL, Strategy.FLPLUS, Strategy.RQ)


PermutationSource = Callable[[int], np.ndarray]


def replicate_generator(seed: int, i: int) -> np.random.Generator:
    """Philox stream keyed by the master seed and the replicate index."""
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(i) & 0xFFFFFFFFFFFFFFFF],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class NullModel:
    strategy: Strategy
    seed: int
    n: int
    d: int
    q: int
    taus: np.ndarray
    # FL / FLPLUS
    fitted: np.ndarray | None = None  # n x d, Z gamma(tau)
    gamma: np.ndarray | None = None  # q x d
    # FL / FLPLUS / RQ: n x d residual matrix; RL / RLS: length-n residuals
    residuals: np.ndarray | None = None
    # FLPLUS: per tau, the q-1 original rows whose residual is dropped
    drop_rows: np.ndarray | None = None  # d x (q-1)
    # WN
    groups: tuple[np.ndarray, ...] | None = None
    y: np.ndarray | None = None
    # RLS
    omega: np.ndarray | None = None
    n_clamped: int = 0
    n_nonpositive: int = 0
    degenerate_drops: int = 0
    permuter: PermutationSource | None = field(default=None, repr=False, compare=False)

    def permutation(self, i: int) -> np.ndarray:
        """Permutation pi_i; replicate row j takes original row pi_i[j]."""
        if i < 1:
            raise IndexZeroReserved()
        if self.permuter is not None:
            return np.asarray(self.permuter(i), dtype=np.int64)
        rng = replicate_generator(self.seed, i)
        if self.groups is None:
            return rng.permutation(self.n)
        perm = np.arange(self.n)
        for g in self.groups:
            perm[g] = g[rng.permutation(len(g))]
        return perm


@dataclass(frozen=True)
class ReplicateData:
    """Responses for one replicate.

    ``per_tau`` is (d, n_eff) when the response differs by tau, else (1, n).
    ``kept_indices`` (FLPLUS only) is (d, n - q + 1): rows entering each fit.
    """

    per_tau: np.ndarray
    shared: bool
    kept_indices: np.ndarray | None = None
    permutation: np.ndarray | None = None


def _freeze(*arrays):
    for a in arrays:
        if isinstance(a, np.ndarray):
            a.setflags(write=False)


def flplus_drop_rows(residuals: np.ndarray, q: int, ztol: float) -> tuple[np.ndarray, int]:
    """Pick q-1 rows per tau whose reduced-fit residual is zero.

    Rows are taken in order of |r| (values within ``ztol`` count as exact
    zeros), then row index.  Returns (d x (q-1) rows, number of taus where
    the zero count was not exactly q).
    """
    n, d = residuals.shape
    out = np.empty((d, q - 1), dtype=np.int64)
    odd = 0
    for k in range(d):
        a = np.abs(residuals[:, k])
        a = np.where(a <= ztol, 0.0, a)
        if int(np.sum(a == 0.0)) != q:
            odd += 1
        order = np.lexsort((np.arange(n), a))
        out[k] = np.sort(order[: q - 1])
    return out, odd


def prepare_null_model(
    dataset: Dataset,
    design: DesignMatrices,
    grid: QuantileGrid,
    strategy,
    seed: int,
    permuter: PermutationSource | None = None,
) -> NullModel:
    strategy = Strategy.parse(strategy)
    y = dataset.y
    Z = design.Z
    n, q, d = dataset.n, design.q, grid.d
    common = dict(strategy=strategy, seed=int(seed), n=n, d=d, q=q,
                  taus=grid.taus, permuter=permuter)

    if strategy in (Strategy.FL, Strategy.FLPLUS):
        fits = qr_fit_grid(Z, y, grid)
        gamma = np.column_stack([f.beta for f in fits])
        fitted = Z @ gamma
        resid = y[:, None] - fitted
        drop, odd = None, 0
        if strategy is Strategy.FLPLUS:
            drop, odd = flplus_drop_rows(resid, q, zero_tolerance(y))
        _freeze(gamma, fitted, resid, drop)
        return NullModel(**common, fitted=fitted, gamma=gamma, residuals=resid,
                         drop_rows=drop, degenerate_drops=odd)

    if strategy is Strategy.WN:
        for name in dataset.nuisance:
            if not dataset.columns[name].categorical:
                raise WnNeedsCategorical()
        labels = dataset.nuisance_groups()
        groups = tuple(np.flatnonzero(labels == g) for g in np.unique(labels))
        _freeze(*groups)
        return NullModel(**common, groups=groups, y=y)

    if strategy is Strategy.RL:
        _, _, eps = ols_fit(Z, y)
        _freeze(eps)
        return NullModel(**common, residuals=eps)

    if strategy is Strategy.RLS:
        eps, omega, clamped, nonpos = location_scale_residuals(Z, y)
        _freeze(eps, omega)
        return NullModel(**common, residuals=eps, omega=omega,
                         n_clamped=clamped, n_nonpositive=nonpos)

    # RQ
    fits = qr_fit_grid(Z, y, grid)
    resid = y[:, None] - Z @ np.column_stack([f.beta for f in fits])
    _freeze(resid)
    return NullModel(**common, residuals=resid)


def location_scale_residuals(Z, y):
    """Least-squares residuals scaled by a linear fit of their absolute values.

    Fitted scales below ``1e-6 * mean|e|`` are clamped to that floor.
    Returns (scaled residuals, omega, n_clamped, n_nonpositive).
    """
    _, _, e = ols_fit(Z, y)
    omega, scale, _ = ols_fit(Z, np.abs(e))
    floor = 1e-6 * float(np.mean(np.abs(e)))
    nonpos = int(np.sum(scale <= 0))
    low = scale < floor
    scale = np.where(low, floor, scale)
    if floor == 0.0:
        return np.zeros_like(e), omega, int(np.sum(low)), nonpos
    return e / scale, omega, int(np.sum(low)), nonpos


def draw_replicate(model: NullModel, i: int) -> ReplicateData:
    """Replicate dataset ``i`` (i >= 1) of the prepared null model."""
    perm = model.permutation(i)
    s = model.strategy
    if s is Strategy.WN:
        return ReplicateData(model.y[perm][None, :], True, permutation=perm)
    if s in (Strategy.RL, Strategy.RLS):
        return ReplicateData(model.residuals[perm][None, :], True, permutation=perm)
    if s is Strategy.RQ:
        return ReplicateData(model.residuals[perm].T.copy(), False, permutation=perm)
    ystar = (model.fitted + model.residuals[perm]).T  # d x n
    if s is Strategy.FL:
        return ReplicateData(ystar.copy(), False, permutation=perm)
    kept = flplus_kept_rows(model, perm)
    per_tau = np.take_along_axis(ystar, kept, axis=1)
    return ReplicateData(per_tau, False, kept_indices=kept, permutation=perm)


def flplus_kept_rows(model: NullModel, perm: np.ndarray) -> np.ndarray:
    """Rows of Y*(tau) surviving the zero-residual drop, shape (d, n-q+1).

    Row j of the replicate carries residual row perm[j]; it is dropped when
    that residual is one of the designated zeros at tau.
    """
    n, d, q = model.n, model.d, model.q
    kept = np.empty((d, n - q + 1), dtype=np.int64)
    for k in range(d):
        dropped = np.isin(perm, model.drop_rows[k])
        kept[k] = np.flatnonzero(~dropped)
    return kept
