"""Flat-file output: CSV fields and sorted-key JSON reports."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core import ScalarField, SpaceTimeGrid


def jsonable(obj):
    """Convert numpy scalars/arrays and dataclass-like reports to JSON types."""
    if hasattr(obj, "to_dict"):
        return jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def write_field_csv(field: ScalarField, path) -> Path:
    """Rows ``t,x,value`` in row-major time order with 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    T, X = field.grid.mesh()
    data = np.column_stack([T.ravel(), X.ravel(), field.values.ravel()])
    np.savetxt(path, data, delimiter=",", header="t,x,value", comments="", fmt="%.17g")
    return path


def read_field_csv(path, grid: SpaceTimeGrid, dirichlet: bool = True) -> ScalarField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape != ((grid.nt + 1) * (grid.nx + 1), 3):
        raise ValueError("CSV does not match the grid")
    return ScalarField(grid, data[:, 2].reshape(grid.nt + 1, grid.nx + 1), dirichlet)


def write_rows_csv(rows, path) -> Path:
    """One row per dict; columns in order of first appearance, blanks where absent."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = list(rows)
    fields = list(dict.fromkeys(k for r in rows for k in r))
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, restval="")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in r.items()})
    return path
