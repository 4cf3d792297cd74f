"""CSV and JSON result bundles with round-trip float formatting."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__


def fmt(v) -> str:
    """Shortest decimal that round-trips (repr of a Python float)."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns: Mapping[str, Sequence]) -> Path:
    path = Path(path)
    names = list(columns)
    data = [list(columns[n]) for n in names]
    rows = len(data[0]) if data else 0
    if any(len(c) != rows for c in data):
        raise ValueError("all columns must have the same length")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(rows):
            w.writerow([fmt(c[i]) for c in data])
    return path


def read_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    head, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(head):
        try:
            out[name] = np.array([float(r[j]) for r in body])
        except ValueError:
            out[name] = np.array([r[j] for r in body])
    return out


def read_trace(path):
    """(time_us, excitation) from a two-column trace file."""
    cols = read_csv(path)
    missing = {"time_us", "excitation"} - set(cols)
    if missing:
        raise ValueError(f"{path} lacks columns {sorted(missing)}")
    return cols["time_us"], cols["excitation"]


def _clean(obj):
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def write_metadata(path, command: str, params: Mapping, report: Mapping,
                   flags: Mapping | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "toolkit": "peitsim",
        "version": __version__,
        "command": command,
        "parameters": params,
        "design_flags": flags or {},
        "report": report,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")
    return path
