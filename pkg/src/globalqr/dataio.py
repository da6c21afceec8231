"""CSV ingestion/export and JSON result serialisation."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Column, Dataset
from .errors import DataError, MissingValues

MISSING = {"", "na", "nan", "null", "none"}
SCHEMA_VERSION = "1.0"


def file_digest(path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_table(path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read '{path}': {exc.strerror}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"'{path}' is not UTF-8") from exc
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"'{path}' is empty")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataError(f"line {i}: expected {len(header)} fields, got {len(r)}")
    return header, body


def _floats(name: str, cells: Sequence[str]) -> np.ndarray:
    out = np.empty(len(cells))
    for i, c in enumerate(cells):
        c = c.strip()
        if c.lower() in MISSING:
            raise MissingValues(f"column '{name}' has a missing value on data row {i + 1}")
        try:
            out[i] = float(c)
        except ValueError:
            raise DataError(f"column '{name}': '{c}' is not a number "
                            "(declare it with --categorical?)") from None
        if not np.isfinite(out[i]):
            raise MissingValues(f"column '{name}' has a non-finite value on data row {i + 1}")
    return out


def read_dataset_csv(path, response: str, interesting: Sequence[str],
                     nuisance: Sequence[str] = (), categorical: Sequence[str] = ()) -> Dataset:
    header, body = _read_table(path)
    wanted = [response, *interesting, *nuisance]
    for name in wanted + list(categorical):
        if name not in header:
            raise DataError(f"column '{name}' not found in '{path}'")
    if response in categorical:
        raise DataError("the response cannot be categorical")
    cols = {}
    for name in [*interesting, *nuisance]:
        cells = [r[header.index(name)].strip() for r in body]
        if name in categorical:
            if any(c.lower() in MISSING for c in cells):
                raise MissingValues(f"column '{name}' has missing values")
            cols[name] = Column(name, np.array(cells, dtype=object), True)
        else:
            cols[name] = Column(name, _floats(name, cells), False)
    y = _floats(response, [r[header.index(response)] for r in body])
    return Dataset(y, cols, tuple(interesting), tuple(nuisance), response_name=response)


def write_dataset_csv(dataset: Dataset, path) -> Path:
    names = [dataset.response_name, *dataset.interesting, *dataset.nuisance]
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(dataset.n):
            row = [repr(float(dataset.y[i]))]
            for name in names[1:]:
                col = dataset.columns[name]
                v = col.values[i]
                row.append(str(v) if col.categorical else repr(float(v)))
            w.writerow(row)
    return path


def read_curves_csv(path) -> tuple[list[str], np.ndarray]:
    """Curve matrix with a header row; data row 1 is the observed curve."""
    header, body = _read_table(path)
    if len(body) < 2:
        raise DataError("curve file needs the observed row and at least one replicate")
    mat = np.column_stack([_floats(h, [r[j] for r in body]) for j, h in enumerate(header)])
    return header, mat


def write_curves_csv(curves: np.ndarray, path, labels=None) -> Path:
    curves = np.asarray(curves, dtype=float)
    labels = labels or [f"k{j}" for j in range(curves.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(labels)
        for row in curves:
            w.writerow([repr(float(v)) for v in row])
    return Path(path)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def dump_json(obj, path) -> Path:
    text = json.dumps(_plain(obj), indent=2, sort_keys=False, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")
    return Path(path)


def envelope_payload(env) -> dict:
    return {
        "measure": env.measure.value,
        "alpha": env.alpha,
        "p_value": env.p_value,
        "rejected": env.rejected,
        "lower": env.lower,
        "upper": env.upper,
        "central": env.central,
        "outside_mask": env.outside_mask,
        "measures": env.measures,
    }


def outcome_payload(outcome, manifest: dict) -> dict:
    """result.json body for a global test (no wall-clock fields)."""
    cfg = outcome.config
    env = outcome.envelope
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "global_test",
        "strategy": cfg.strategy.value,
        "s": cfg.s,
        "taus": cfg.grid.taus,
        "p_value": env.p_value,
        "alpha": env.alpha,
        "rejected": env.rejected,
        "observed": outcome.observed,
        "envelope": envelope_payload(env),
        "coefficient_labels": [{"coefficient": c, "tau": t} for c, t in outcome.coefficient_labels],
        "significant_coordinates": [{"coefficient": c, "tau": t}
                                    for c, t in outcome.significant_coordinates],
        "comparators": outcome.comparator_p,
        "diagnostics": outcome.diagnostics,
        "manifest": manifest,
    }


def schema_path() -> Path:
    return Path(__file__).parent / "schema" / "result.schema.json"


def load_schema() -> dict:
    return json.loads(schema_path().read_text(encoding="utf-8"))
