"""Matplotlib figures: envelope panels per coefficient and study rate curves.

SVG output is made reproducible by fixing the hash salt and dropping the
date metadata, so reruns produce identical files.
"""

from __future__ import annotations

import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "svg.hashsalt": "globalqr",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}
STRATEGY_COLORS = {
    "FL": "#8c564b", "FLPLUS": "#e377c2", "FLPLUS*": "#f7b6d2", "WN": "#2ca02c",
    "RL": "#1f77b4", "RLS": "#ff7f0e", "RQ": "#9467bd", "PH": "#7f7f7f", "NC": "#d62728",
}


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text).strip("_") or "coef"


def _save(fig, path: Path):
    path = Path(path)
    fmt = path.suffix.lstrip(".") or "svg"
    meta = {"Date": None} if fmt == "svg" else None
    fig.savefig(path, format=fmt, metadata=meta, bbox_inches="tight")
    plt.close(fig)
    return path


def envelope_panel(ax, taus, observed, lower, upper, central, outside, title=""):
    """Band (shaded), replicate median (dashed), observed (solid), exits (red dots)."""
    ax.fill_between(taus, lower, upper, color="0.82", lw=0, label="global envelope")
    ax.plot(taus, central, ls="--", color="0.35", lw=1, label="null median")
    ax.plot(taus, observed, color="k", lw=1.4, label="observed")
    if np.any(outside):
        ax.plot(np.asarray(taus)[outside], np.asarray(observed)[outside], "o",
                color="#d62728", ms=4, label="outside")
    ax.axhline(0.0, color="0.6", lw=0.6)
    ax.set_xlabel(r"$\tau$")
    ax.set_ylabel("coefficient")
    if title:
        ax.set_title(title)


def plot_envelope_panels(envelope, observed, labels, taus, out_dir, p_value=None,
                         prefix="coef") -> list[Path]:
    """One SVG per coefficient; ``labels`` names the p coefficients."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    taus = np.asarray(taus, dtype=float)
    d = len(taus)
    paths = []
    with plt.rc_context(RC):
        for j, lab in enumerate(labels):
            sl = slice(j * d, (j + 1) * d)
            fig, ax = plt.subplots(figsize=(4.5, 3.0))
            title = lab if p_value is None else f"{lab}   (global p = {p_value:.3g})"
            envelope_panel(ax, taus, observed[sl], envelope.lower[sl], envelope.upper[sl],
                           envelope.central[sl], envelope.outside_mask[sl], title)
            if j == 0:
                ax.legend(frameon=False, fontsize=7)
            paths.append(_save(fig, out_dir / f"{prefix}_{j:02d}_{_slug(lab)}.svg"))
    return paths


def plot_curve_envelope(envelope, observed, path, title=""):
    """Single panel over coordinate index, for raw curve files."""
    k = np.arange(len(observed))
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3))
        envelope_panel(ax, k, observed, envelope.lower, envelope.upper,
                       envelope.central, envelope.outside_mask, title)
        ax.set_xlabel("coordinate")
        ax.set_ylabel("value")
        ax.legend(frameon=False, fontsize=7)
        return _save(fig, path)


def plot_study(result, path, alpha=None):
    """Rejection rate against N, one panel per (experiment, mode)."""
    rows = result.rows
    panels = sorted({(r.experiment + r.subcase, r.mode) for r in rows})
    if not panels:
        return None
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(panels), figsize=(3.4 * len(panels), 3.0),
                                 squeeze=False)
        for ax, (exp, mode) in zip(axes[0], panels):
            sub = [r for r in rows if r.experiment + r.subcase == exp and r.mode == mode]
            for st in dict.fromkeys(r.strategy for r in sub):
                pts = sorted((r.N, r.rate, r.mc_se) for r in sub if r.strategy == st)
                N, rate, se = map(np.array, zip(*pts))
                ax.errorbar(N, rate, yerr=2 * se, marker="o", ms=3, capsize=2, lw=1,
                            color=STRATEGY_COLORS.get(st), label=st)
            a = alpha if alpha is not None else sub[0].alpha
            if mode == "null":
                ax.axhline(a, color="0.5", ls=":", lw=1)
            ax.set_ylim(0, 1 if mode != "null" else max(0.3, max(r.rate for r in sub) + 0.05))
            ax.set_xlabel("N")
            ax.set_ylabel("rejection rate")
            ax.set_title(f"{exp} ({mode})")
        axes[0][-1].legend(frameon=False, fontsize=7)
        return _save(fig, path)
