"""Global permutation test for covariate effects over a grid of quantiles."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import CurveSet, Dataset, DesignMatrices, QuantileGrid, build_design
from .envelope import GlobalEnvelope, Measure, build_envelope, holm_adjust
from .errors import DataError, DidNotConverge, RankDeficientDesign, ReplicateFitError
from .permutation import (
    NullModel,
    PermutationSource,
    Strategy,
    flplus_kept_rows,
    location_scale_residuals,
    prepare_null_model,
)
from .qr_solver import fit_batch, ols_fit, qr_fit, qr_fit_grid


@dataclass(frozen=True)
class TestConfig:
    grid: QuantileGrid
    strategy: Strategy = Strategy.RQ
    s: int = 999
    alpha: float = 0.05
    measure: Measure = Measure.ERL
    seed: int = 0
    workers: int = 1

    __test__ = False  # not a pytest class

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        object.__setattr__(self, "measure", Measure.parse(self.measure))
        if self.s < 1:
            raise DataError("need at least one permutation")
        if not 0.0 < self.alpha < 1.0:
            raise DataError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.workers < 1:
            object.__setattr__(self, "workers", os.cpu_count() or 1)


@dataclass(frozen=True)
class TestOutcome:
    envelope: GlobalEnvelope
    observed: np.ndarray
    curves: CurveSet
    coefficient_labels: list[tuple[str, float]]
    significant_coordinates: list[tuple[str, float]]
    comparator_p: dict[str, float]
    diagnostics: list[str] = field(default_factory=list)
    config: TestConfig | None = None

    __test__ = False

    @property
    def p_value(self) -> float:
        return self.envelope.p_value


def residual_design(design: DesignMatrices) -> np.ndarray:
    """Intercept plus the interesting columns, for residual-stage fits."""
    return np.hstack([np.ones((design.X.shape[0], 1)), design.X])


def _stat_design(design: DesignMatrices, strategy: Strategy):
    """(design matrix, slice selecting the interesting coefficients)."""
    p = design.p
    if strategy.residual_stage:
        return residual_design(design), slice(1, 1 + p)
    return design.full, slice(0, p)


def filtered_response(dataset: Dataset, design: DesignMatrices, grid: QuantileGrid,
                      strategy: Strategy) -> np.ndarray:
    """Response of the statistic fit: y, the filtered residuals, or (RQ) n x d."""
    y = dataset.y
    if strategy is Strategy.RL:
        return ols_fit(design.Z, y)[2]
    if strategy is Strategy.RLS:
        return location_scale_residuals(design.Z, y)[0]
    if strategy is Strategy.RQ:
        fits = qr_fit_grid(design.Z, y, grid)
        return y[:, None] - design.Z @ np.column_stack([f.beta for f in fits])
    return y


def observed_statistic(dataset: Dataset, design: DesignMatrices, grid: QuantileGrid,
                       strategy) -> np.ndarray:
    """Observed test vector (length p*d) under the strategy's recipe."""
    return _observed(dataset, design, grid, Strategy.parse(strategy))[0]


def _observed(dataset, design, grid, strategy):
    X, sel = _stat_design(design, strategy)
    resp = filtered_response(dataset, design, grid, strategy)
    if resp.ndim == 2:
        fits = []
        for k, tau in enumerate(grid.taus):
            fits.append(qr_fit(X, resp[:, k], tau, start=fits[-1].basis if fits else None))
    else:
        fits = qr_fit_grid(X, resp, grid)
    beta = np.column_stack([f.beta[sel] for f in fits])  # p x d
    return beta.reshape(-1), fits


def replicate_statistics(model: NullModel, design: DesignMatrices, indices,
                         start=None) -> np.ndarray:
    """Test vectors of replicates ``indices``, shape (len(indices), p*d)."""
    indices = np.asarray(indices, dtype=np.int64)
    X, sel = _stat_design(design, model.strategy)
    perms = np.stack([model.permutation(int(i)) for i in indices])
    s = model.strategy
    rows = None
    if s is Strategy.WN:
        Y = model.y[perms]
    elif s in (Strategy.RL, Strategy.RLS):
        Y = model.residuals[perms]
    elif s is Strategy.RQ:
        Y = np.transpose(model.residuals[perms], (0, 2, 1))
    else:
        Y = np.transpose(model.fitted[None] + model.residuals[perms], (0, 2, 1))
        if s is Strategy.FLPLUS:
            rows = np.stack([flplus_kept_rows(model, p) for p in perms])
    try:
        betas = fit_batch(X, Y, model.taus, rows=rows, start=start)
    except (DidNotConverge, RankDeficientDesign) as exc:
        row = getattr(exc, "row", 0)
        raise ReplicateFitError(int(indices[row]), getattr(exc, "tau", float("nan")), exc) from exc
    b = betas[:, :, sel]  # R x d x p
    return np.transpose(b, (0, 2, 1)).reshape(len(indices), -1)


def _chunks(s: int, workers: int):
    idx = np.arange(1, s + 1)
    n_chunks = max(1, min(workers * 4, s)) if workers > 1 else 1
    return [c for c in np.array_split(idx, n_chunks) if len(c)]


def pointwise_perm_pvalues(curves) -> np.ndarray:
    """Two-sided permutation p-value per coordinate, centred at the replicate median."""
    c = curves.curves if isinstance(curves, CurveSet) else np.asarray(curves, dtype=float)
    med = np.median(c[1:], axis=0)
    dev = np.abs(c - med)
    return np.sum(dev >= dev[0], axis=0) / c.shape[0]


def comparators(curves) -> tuple[float, float]:
    """(PH, NC): min Holm-adjusted and min raw pointwise p-value."""
    p = pointwise_perm_pvalues(curves)
    return float(holm_adjust(p).min()), float(p.min())


def coefficient_labels(design: DesignMatrices, grid: QuantileGrid) -> list[tuple[str, float]]:
    return [(lab, float(t)) for lab in design.x_labels for t in grid.taus]


def global_test(dataset: Dataset, config: TestConfig,
                permuter: PermutationSource | None = None) -> TestOutcome:
    design = build_design(dataset)
    grid, strategy = config.grid, config.strategy
    observed, fits = _observed(dataset, design, grid, strategy)
    model = prepare_null_model(dataset, design, grid, strategy, config.seed, permuter)
    start = fits[0].basis

    chunks = _chunks(config.s, config.workers)
    if len(chunks) == 1:
        reps = [replicate_statistics(model, design, chunks[0], start)]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            reps = list(pool.map(lambda c: replicate_statistics(model, design, c, start), chunks))
    curves = CurveSet(np.vstack([observed[None, :]] + reps), p=design.p, d=grid.d)

    env = build_envelope(curves, config.measure, config.alpha)
    labels = coefficient_labels(design, grid)
    significant = [labels[k] for k in np.flatnonzero(env.outside_mask)]
    ph, nc = comparators(curves)
    return TestOutcome(
        envelope=env,
        observed=observed,
        curves=curves,
        coefficient_labels=labels,
        significant_coordinates=significant,
        comparator_p={"PH": ph, "NC": nc},
        diagnostics=_diagnostics(dataset, design, grid, model),
        config=config,
    )


def _diagnostics(dataset, design, grid, model: NullModel) -> list[str]:
    out = []
    n = dataset.n
    extreme = [t for t in grid.taus if n * min(t, 1 - t) < 1]
    if extreme:
        out.append("extreme tau for n=%d: %s" % (n, ", ".join(f"{t:g}" for t in extreme)))
    if model.n_nonpositive:
        out.append(f"RLS: {model.n_nonpositive} fitted scales were <= 0")
    if model.n_clamped:
        out.append(f"RLS: {model.n_clamped} fitted scales clamped to the floor")
    if model.degenerate_drops:
        out.append(f"FLPLUS: zero-residual count differed from q at {model.degenerate_drops} taus")
    return out
