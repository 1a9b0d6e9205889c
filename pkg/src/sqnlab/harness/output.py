"""CSV and JSON emission of experiment results."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict
from pathlib import Path

from .experiment import AggregateStats, ExperimentResult, stepsize_echo

__all__ = [
    "CSV_COLUMNS",
    "VARIANCE_NOTE",
    "emit_csv",
    "emit_json",
    "read_csv",
    "read_json",
    "stats_from_dict",
    "write_outputs",
]

CSV_COLUMNS = (
    "experiment",
    "algo",
    "n",
    "param_set",
    "run",
    "n_sfo",
    "grad_norm",
    "grad_norm_sq",
    "err",
    "bb_fraction",
    "resets",
    "cpu_seconds",
)

VARIANCE_NOTE = "var is the sample variance with denominator N_run - 1 (0 when N_run = 1)"

_INT_COLUMNS = {"n", "run", "n_sfo", "resets"}
_FLOAT_COLUMNS = {"grad_norm", "grad_norm_sq", "err", "bb_fraction", "cpu_seconds"}


def _tool_version():
    from .. import __version__

    return __version__


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    return str(value)


def emit_csv(records, path) -> None:
    """Write one row per successful run; failed runs are left to the JSON."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        if r.get("failed"):
            continue
        w.writerow([_csv_cell(r.get(c)) for c in CSV_COLUMNS])
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out = {}
            for k, v in row.items():
                if v == "" and (k in _INT_COLUMNS or k in _FLOAT_COLUMNS):
                    out[k] = None
                elif k in _INT_COLUMNS:
                    out[k] = int(v)
                elif k in _FLOAT_COLUMNS:
                    out[k] = float(v)
                else:
                    out[k] = v
            rows.append(out)
    return rows


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def emit_json(result: ExperimentResult, path) -> None:
    doc = {
        "tool_version": _tool_version(),
        "variance_note": VARIANCE_NOTE,
        "config": result.spec.to_dict(),
        "stepsizes": stepsize_echo(result.stepsizes),
        "columns": list(CSV_COLUMNS),
        "stats": {name: asdict(s) for name, s in result.stats.items()},
        "records": result.records,
    }
    Path(path).write_text(json.dumps(_json_safe(doc), indent=2, allow_nan=False) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def stats_from_dict(doc: dict) -> dict:
    return {name: AggregateStats(**d) for name, d in doc["stats"].items()}


def write_outputs(result: ExperimentResult, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = result.spec.name
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
    emit_csv(result.records, csv_path)
    emit_json(result, json_path)
    return csv_path, json_path
