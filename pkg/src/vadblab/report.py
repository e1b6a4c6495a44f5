"""CSV and summary writers. Floats use repr so reruns are byte-identical."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

DISTANCE_HEADER = ("i", "j", "d0", "dj", "weight_i", "weight_j")


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def rows_to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([format_value(row.get(c, "")) for c in columns])
    return buf.getvalue()


def distance_rows(d0, dj):
    """One row per unordered sample pair (i < j)."""
    ids = d0.ids
    w = d0.weights
    n = len(ids)
    iu, ju = np.triu_indices(n, 1)
    for a, b in zip(iu, ju):
        yield {"i": int(ids[a]), "j": int(ids[b]), "d0": float(d0.distances[a, b]),
               "dj": float(dj.distances[a, b]), "weight_i": float(w[a]), "weight_j": float(w[b])}


def flat_report_rows(report):
    out = []
    for r in report.rows:
        row = {c: getattr(r, c) for c in report_columns() if c != "mode"}
        row["mode"] = report.mode
        out.append(row)
    return out


def report_columns():
    from .flat import FlatBoundRow
    return FlatBoundRow.CSV_FIELDS + ("mode", "lam", "eps", "good_set_size", "excluded_fraction0")


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


def config_json(config: dict) -> str:
    return json.dumps(_jsonable(config), sort_keys=True, indent=2) + "\n"


def summary_text(lines) -> str:
    return "".join(f"{line}\n" for line in lines)


def write_outputs(out_dir, name: str, csv_text: str, summary_lines, config: dict) -> Path:
    """Write ``<name>.csv``, ``summary.txt`` and ``config.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.csv").write_text(csv_text)
    (out / "summary.txt").write_text(summary_text(summary_lines))
    (out / "config.json").write_text(config_json(config))
    return out
