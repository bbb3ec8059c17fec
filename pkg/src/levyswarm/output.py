"""Run-directory writers: manifest.json and comma-separated tables."""

from __future__ import annotations

import csv
import json
import math
import platform
from pathlib import Path

import numpy as np

from . import __version__
from .config import config_hash


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True)


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj) + "\n", encoding="utf-8")


def write_manifest(out: Path, command: str, config: dict, results: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "package_version": __version__,
        "config": config,
        "config_hash": config_hash(config),
        "seed": config.get("seed"),
        "environment": {"python": platform.python_version(), "numpy": np.__version__},
        "results": results or {},
    }
    path = Path(out) / "manifest.json"
    write_json(path, manifest)
    return path


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_field(path: Path, grid, **columns) -> None:
    """One row per cell: x, y and the named fields."""
    X, Y = grid.mesh()
    cols = [X.ravel(), Y.ravel()] + [np.asarray(v).ravel() for v in columns.values()]
    write_csv(path, ["x", "y", *columns], zip(*cols))
