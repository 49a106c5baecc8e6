"""Reading and writing fields, series and reports."""

from __future__ import annotations

import csv
import json
import math
from enum import Enum
from pathlib import Path

import numpy as np

from .grid import TorusGrid, VectorGridField


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays, enums and objects with ``to_json``."""
    if hasattr(obj, "to_json"):
        return to_jsonable(obj.to_json())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no inf/nan; keep them readable
        return x if math.isfinite(x) else str(x)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def write_rows_csv(path, rows: list[dict]) -> Path:
    """Rows of equal keys as CSV (header from the first row)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if not rows:
            return path
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v for k, v in row.items()})
    return path


def read_rows_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def field_header(field: VectorGridField) -> dict:
    g = field.grid
    return {"dim": g.dim, "n": g.n, "period": g.period, "m": field.m, "t": float(field.t),
            "dtype": "<f8", "order": "C"}


def write_field_binary(stem, field: VectorGridField) -> tuple[Path, Path]:
    """Raw little-endian float64 values ``(m, *shape)`` plus a JSON header."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    bin_path = stem.with_suffix(".bin")
    np.ascontiguousarray(field.values, dtype="<f8").tofile(bin_path)
    hdr_path = write_json(stem.with_suffix(".json"), field_header(field))
    return bin_path, hdr_path


def read_field_binary(stem) -> VectorGridField:
    stem = Path(stem)
    hdr = json.loads(stem.with_suffix(".json").read_text())
    grid = TorusGrid(hdr["dim"], hdr["n"], hdr["period"])
    values = np.fromfile(stem.with_suffix(".bin"), dtype="<f8").reshape((hdr["m"],) + grid.shape)
    return VectorGridField(grid, values, hdr["t"])


def write_field_csv(path, field: VectorGridField) -> Path:
    """One row per cell: coordinates followed by the ``m`` values."""
    g = field.grid
    pts = g.flat_coords()
    vals = field.flat()
    names = ["x", "y"][: g.dim]
    rows = []
    for k in range(g.ncells):
        row = {n: float(pts[k, a]) for a, n in enumerate(names)}
        row.update({f"u{i + 1}": float(vals[i, k]) for i in range(field.m)})
        rows.append(row)
    return write_rows_csv(path, rows)
