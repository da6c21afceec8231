"""Rank-based global envelopes.

Rows of a curve matrix are ordered from most to least extreme by a measure;
the ``alpha (s+1)`` most extreme rows are cut and the band is the
coordinatewise min/max of what remains.  Row 0 (the observed vector) leaves
the band somewhere exactly when the global p-value is at most ``alpha``.

Measures are reported as ``E_i = (1 + #rows strictly more extreme) / (s+1)``
so smaller means more extreme.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .core import CurveSet
from .errors import DataError

_EPS = 1e-9


class Measure(str, enum.Enum):
    ERL = "ERL"
    AREA = "AREA"

    @classmethod
    def parse(cls, name) -> "Measure":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).upper())
        except ValueError:
            raise DataError(f"unknown measure '{name}'") from None


class AlphaTooSmallForS(UserWarning):
    pass


@dataclass(frozen=True)
class GlobalEnvelope:
    lower: np.ndarray
    upper: np.ndarray
    central: np.ndarray
    measures: np.ndarray
    p_value: float
    alpha: float
    outside_mask: np.ndarray
    measure: Measure = Measure.ERL

    @property
    def rejected(self) -> bool:
        return self.p_value <= self.alpha + _EPS


def _matrix(curves) -> np.ndarray:
    c = curves.curves if isinstance(curves, CurveSet) else np.asarray(curves, dtype=float)
    if c.ndim != 2 or c.shape[0] < 2:
        raise DataError("need at least an observed row and one replicate")
    return c


def pointwise_ranks(curves) -> np.ndarray:
    """Two-sided mid-ranks ``min(r, s + 2 - r)``; small means extreme."""
    c = _matrix(curves)
    r = rankdata(c, axis=0, method="average")
    return np.minimum(r, c.shape[0] + 1 - r)


def _strict_less_counts(keys: np.ndarray) -> np.ndarray:
    """For each row, the number of rows strictly lexicographically smaller."""
    order = np.lexsort(keys.T[::-1])
    srt = keys[order]
    new_block = np.ones(len(order), dtype=bool)
    new_block[1:] = np.any(srt[1:] != srt[:-1], axis=1)
    starts = np.flatnonzero(new_block)
    block_start = starts[np.cumsum(new_block) - 1]
    out = np.empty(len(order), dtype=np.int64)
    out[order] = block_start
    return out


def erl_counts(ranks: np.ndarray) -> np.ndarray:
    return _strict_less_counts(np.sort(ranks, axis=1))


def erl_measure(ranks) -> np.ndarray:
    """Extreme rank length: lexicographic order of each row's sorted ranks."""
    ranks = np.asarray(ranks, dtype=float)
    return (1.0 + erl_counts(ranks)) / ranks.shape[0]


def continuous_ranks(curves, ranks=None) -> np.ndarray:
    """Two-sided ranks lowered by how far a value sits beyond its inner neighbour.

    For a value below the column median, the inner neighbour is the next
    larger distinct value; the rank is reduced by
    ``gap / (distance to the median)``, a fraction in (0, 1].  Symmetrically
    above the median.  Values at the median keep their rank.
    """
    c = _matrix(curves)
    if ranks is None:
        ranks = pointwise_ranks(c)
    n, K = c.shape
    out = np.array(ranks, dtype=float)
    for k in range(K):
        col = c[:, k]
        med = np.median(col)
        uniq = np.unique(col)
        pos = np.searchsorted(uniq, col)
        nxt = uniq[np.minimum(pos + 1, len(uniq) - 1)]
        prv = uniq[np.maximum(pos - 1, 0)]
        below = col < med
        above = col > med
        gap = np.where(below, np.minimum(nxt, med) - col, np.where(above, col - np.maximum(prv, med), 0.0))
        dist = np.abs(col - med)
        frac = np.divide(gap, dist, out=np.zeros_like(gap), where=dist > 0)
        out[:, k] -= np.clip(frac, 0.0, 1.0)
    return out


def _area_values(curves, ranks) -> np.ndarray:
    cont = continuous_ranks(curves, ranks)
    extreme = ranks.min(axis=1, keepdims=True)
    return np.minimum(cont, extreme).mean(axis=1)


def _area_counts(curves, ranks) -> np.ndarray:
    erl_keys = np.sort(ranks, axis=1)
    area = _area_values(curves, ranks)
    return _strict_less_counts(np.column_stack([erl_keys, area]))


def area_measure(curves, ranks=None) -> np.ndarray:
    """ERL ordering with ties broken by the area below the extreme rank.

    Rows sharing an ERL vector are ordered by the mean over coordinates of
    ``min(continuous rank, extreme rank)``: the further a row's values
    stick out beyond their neighbours, the smaller this area and the more
    extreme the row.  Rows without an ERL tie keep their ERL value.
    """
    c = _matrix(curves)
    if ranks is None:
        ranks = pointwise_ranks(c)
    return (1.0 + _area_counts(c, ranks)) / c.shape[0]


def measure_counts(curves, measure=Measure.ERL) -> tuple[np.ndarray, np.ndarray]:
    """(ranks, integer extremeness counts) for the chosen measure."""
    c = _matrix(curves)
    ranks = pointwise_ranks(c)
    if Measure.parse(measure) is Measure.AREA:
        return ranks, _area_counts(c, ranks)
    return ranks, erl_counts(ranks)


def build_envelope(curves, measure=Measure.ERL, alpha: float = 0.05) -> GlobalEnvelope:
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha must lie in (0, 1), got {alpha}")
    measure = Measure.parse(measure)
    c = _matrix(curves)
    n_rows = c.shape[0]
    budget = alpha * n_rows
    if budget < 1.0 - _EPS:
        warnings.warn(
            f"alpha*(s+1) = {budget:.3g} < 1: no replicate can be excluded; "
            "use more permutations",
            AlphaTooSmallForS,
            stacklevel=2,
        )
    ranks, counts = measure_counts(c, measure)

    # critical value: largest count v with #{counts < v} <= alpha (s+1)
    values = np.unique(counts)
    less = np.searchsorted(np.sort(counts), values, side="left")
    crit = values[less <= budget + _EPS].max()
    kept = counts >= crit
    lower = c[kept].min(axis=0)
    upper = c[kept].max(axis=0)

    p_value = float(np.sum(counts <= counts[0])) / n_rows
    obs = c[0]
    strict = (obs < lower) | (obs > upper)
    if kept[0]:
        outside = np.zeros(c.shape[1], dtype=bool)
    else:
        # with value ties the observed row may only touch the band at its most
        # extreme coordinates; those count as exits
        touch = (obs <= lower) | (obs >= upper)
        outside = strict | (touch & (ranks[0] == ranks[0].min()))
    return GlobalEnvelope(
        lower=lower,
        upper=upper,
        central=np.median(c[1:], axis=0),
        measures=(1.0 + counts) / n_rows,
        p_value=p_value,
        alpha=float(alpha),
        outside_mask=outside,
        measure=measure,
    )


def holm_adjust(pvalues) -> np.ndarray:
    """Holm step-down adjusted p-values, in input order."""
    p = np.asarray(pvalues, dtype=float)
    m = p.size
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="mergesort")
    adj = np.minimum(1.0, (m - np.arange(m)) * p[order])
    adj = np.maximum.accumulate(adj)
    out = np.empty(m)
    out[order] = adj
    return out
