"""Command-line interface: ``globalqr test | simulate | envelope``.

Each command writes a machine-readable payload (JSON or CSV) plus a
``manifest.json`` carrying timestamps; the payload itself embeds the
time-free part of the manifest so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

from . import dataio
from .core import QuantileGrid
from .envelope import Measure, build_envelope
from .errors import DataError, GlobalQRError, InvalidParameters
from .inference import TestConfig, global_test
from .permutation import Strategy

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
DEFAULT_TAUS = "10@0.01:0.99"
DEFAULT_STRATEGIES = "FL,FLPLUS,WN,RL,RLS,RQ,PH,NC"
SEED_ENV = "GLOBALQR_SEED"


def tool_version() -> str:
    try:
        return version("globalqr")
    except PackageNotFoundError:  # pragma: no cover - source checkout
        return "0+unknown"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _available_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"error: {message}\n")


def _names(text: str | None) -> list[str]:
    return [t.strip() for t in (text or "").split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in _names(text)]
    except ValueError:
        raise InvalidParameters(f"expected a comma-separated list of integers, got '{text}'") from None


def _resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise InvalidParameters(f"{SEED_ENV}='{env}' is not an integer") from None


def _manifest(command: str, config: dict, inputs: dict | None = None) -> dict:
    return {
        "tool": "globalqr",
        "version": tool_version(),
        "command": command,
        "config": config,
        "inputs": inputs or {},
        "seed": config.get("seed"),
    }


def _write_manifest(out: Path, manifest: dict, started: str, outputs: list[Path]):
    full = dict(manifest)
    full["started_utc"] = started
    full["finished_utc"] = _now()
    full["outputs"] = sorted(p.name if p.parent == out else str(p.relative_to(out))
                             for p in outputs)
    dataio.dump_json(full, out / "manifest.json")


# -- commands ---------------------------------------------------------------

def cmd_test(args) -> int:
    started = _now()
    seed = _resolve_seed(args.seed)
    workers = args.workers if args.workers and args.workers > 0 else _available_workers()
    interesting = _names(args.interesting)
    nuisance = _names(args.nuisance)
    categorical = _names(args.categorical)
    grid = QuantileGrid.parse(args.taus)
    config = TestConfig(grid, Strategy.parse(args.strategy), s=args.nperm, alpha=args.alpha,
                        measure=Measure.parse(args.measure), seed=seed, workers=workers)
    dataset = dataio.read_dataset_csv(args.data, args.response, interesting, nuisance,
                                      categorical)
    resolved = {
        "data": str(args.data),
        "response": args.response,
        "interesting": interesting,
        "nuisance": nuisance,
        "categorical": categorical,
        "taus": list(grid.taus),
        "strategy": config.strategy.value,
        "nperm": config.s,
        "alpha": config.alpha,
        "measure": config.measure.value,
        "seed": seed,
    }
    manifest = _manifest("test", resolved, {"data": dataio.file_digest(args.data)})
    outcome = global_test(dataset, config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = [dataio.dump_json(dataio.outcome_payload(outcome, manifest), out / "result.json")]
    if args.plot:
        from .plotting import plot_envelope_panels

        labels = list(dict.fromkeys(c for c, _ in outcome.coefficient_labels))
        written += plot_envelope_panels(outcome.envelope, outcome.observed, labels, grid.taus,
                                        out, p_value=outcome.p_value)
    _write_manifest(out, manifest, started, written)
    verdict = "reject" if outcome.envelope.rejected else "do not reject"
    print(f"p-value {outcome.p_value:.4g} ({verdict} at alpha={config.alpha:g}); "
          f"wrote {out / 'result.json'}")
    for line in outcome.diagnostics:
        print(f"warning: {line}", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simstudy import ExperimentId, run_study

    started = _now()
    seed = _resolve_seed(args.seed)
    workers = args.workers if args.workers and args.workers > 0 else _available_workers()
    ids = _names(args.experiment)
    if not ids:
        raise InvalidParameters("--experiment is required")
    params = {"c": args.c, "sigma_eps": args.sigma_eps}
    if args.a is not None:
        params["a"] = args.a
    if args.b is not None:
        params["b"] = args.b
    experiments = []
    for e in ids:
        exp = ExperimentId.parse(e, **params) if not args.subcase else \
            ExperimentId(e, args.subcase, **params)
        experiments.append(exp)
    modes = {"null": ("null",), "power": ("power",), "both": ("null", "power")}[args.mode]
    Ns = _ints(args.N)
    strategies = _names(args.strategies)
    grid = QuantileGrid.parse(args.taus)
    if args.replicates < 1 or any(n < 2 for n in Ns):
        raise InvalidParameters("need --replicates >= 1 and every N >= 2")
    resolved = {
        "experiments": [e.name for e in experiments],
        "a": [e.a for e in experiments],
        "b": [e.b for e in experiments],
        "c": args.c,
        "sigma_eps": args.sigma_eps,
        "N": Ns,
        "replicates": args.replicates,
        "nperm": args.nperm,
        "strategies": strategies,
        "mode": args.mode,
        "taus": list(grid.taus),
        "alpha": args.alpha,
        "measure": Measure.parse(args.measure).value,
        "seed": seed,
    }
    manifest = _manifest("simulate", resolved)
    progress = None
    if args.verbose:
        def progress(exp, N, mode, rep):
            print(f"\r{exp.name} N={N} {mode}: {rep + 1}/{args.replicates}", end="",
                  file=sys.stderr, flush=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = run_study(experiments, strategies, Ns, args.replicates, args.nperm, grid,
                           alpha=args.alpha, seed=seed, modes=modes, measure=args.measure,
                           workers=workers, progress=progress)
    if args.verbose:
        print(file=sys.stderr)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "study.csv"
    csv_path.write_text(result.to_csv(), encoding="utf-8")
    written = [csv_path]
    if args.plot:
        from .plotting import plot_study

        p = plot_study(result, out / "study.svg", alpha=args.alpha)
        if p is not None:
            written.append(p)
    _write_manifest(out, manifest, started, written)
    print(f"{len(result.rows)} rows; wrote {csv_path}")
    return EXIT_OK


def cmd_envelope(args) -> int:
    started = _now()
    labels, curves = dataio.read_curves_csv(args.curves)
    measure = Measure.parse(args.measure)
    env = build_envelope(curves, measure, args.alpha)
    resolved = {"curves": str(args.curves), "alpha": args.alpha, "measure": measure.value,
                "seed": None}
    manifest = _manifest("envelope", resolved, {"curves": dataio.file_digest(args.curves)})
    payload = {
        "schema_version": dataio.SCHEMA_VERSION,
        "kind": "envelope",
        "s": curves.shape[0] - 1,
        "labels": labels,
        "p_value": env.p_value,
        "alpha": env.alpha,
        "rejected": env.rejected,
        "observed": curves[0],
        "envelope": dataio.envelope_payload(env),
        "manifest": manifest,
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = [dataio.dump_json(payload, out / "result.json")]
    if args.plot:
        from .plotting import plot_curve_envelope

        written.append(plot_curve_envelope(env, curves[0], out / "envelope.svg",
                                           title=f"p = {env.p_value:.3g}"))
    _write_manifest(out, manifest, started, written)
    print(f"p-value {env.p_value:.4g}; wrote {out / 'result.json'}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="globalqr", description="Global quantile regression permutation tests "
                "with global envelopes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {tool_version()}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("test", help="test covariates over a grid of quantiles")
    t.add_argument("--data", required=True, type=Path, help="input CSV with header row")
    t.add_argument("--response", required=True)
    t.add_argument("--interesting", required=True, help="comma-separated covariates under test")
    t.add_argument("--nuisance", default="", help="comma-separated nuisance covariates")
    t.add_argument("--categorical", default="", help="columns to dummy-code")
    t.add_argument("--taus", default=DEFAULT_TAUS, help="comma list or 'd@lo:hi'")
    t.add_argument("--strategy", default="rq", type=str.lower,
                   choices=["fl", "flplus", "fl+", "wn", "rl", "rls", "rq"])
    t.add_argument("--nperm", type=int, default=999, help="number of permutations s")
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--measure", default="erl", type=str.lower, choices=["erl", "area"])
    t.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")
    t.add_argument("--workers", type=int, default=0, help="default: available CPUs")
    t.add_argument("--out", required=True, type=Path, help="output directory")
    t.add_argument("--plot", action="store_true", help="one SVG per coefficient")
    t.set_defaults(func=cmd_test)

    s = sub.add_parser("simulate", help="run a simulation study")
    s.add_argument("--experiment", required=True, help="e.g. Ia, Ib, V-cat, VI (comma list)")
    s.add_argument("--subcase", default=None)
    s.add_argument("--c", type=float, default=0.0, help="correlation parameter (Exp VI)")
    s.add_argument("--a", type=float, default=None)
    s.add_argument("--b", type=float, default=None)
    s.add_argument("--sigma-eps", type=float, default=0.2)
    s.add_argument("--N", default="50,100", help="comma-separated sample sizes")
    s.add_argument("--replicates", type=int, default=100)
    s.add_argument("--nperm", type=int, default=199)
    s.add_argument("--strategies", default=DEFAULT_STRATEGIES)
    s.add_argument("--mode", default="null", choices=["null", "power", "both"])
    s.add_argument("--taus", default=DEFAULT_TAUS)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--measure", default="erl", type=str.lower, choices=["erl", "area"])
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--workers", type=int, default=0)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--plot", action="store_true", help="rejection-rate figure")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("envelope", help="global envelope test on a curve matrix")
    e.add_argument("--curves", required=True, type=Path,
                   help="CSV with header; first data row observed, the rest replicates")
    e.add_argument("--alpha", type=float, default=0.05)
    e.add_argument("--measure", default="erl", type=str.lower, choices=["erl", "area"])
    e.add_argument("--out", required=True, type=Path)
    e.add_argument("--plot", action="store_true")
    e.set_defaults(func=cmd_envelope)
    return p


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    warnings.showwarning = _show_warning
    try:
        return args.func(args)
    except GlobalQRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
