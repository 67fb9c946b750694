"""Deterministic CSV/JSON emission (floats written with round-trip precision)."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def read_csv(path):
    with Path(path).open() as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def trajectory_rows(t, positions, velocities):
    for i, (x, v) in enumerate(zip(positions, velocities)):
        yield [t, i, *x.tolist(), *v.tolist()]


def trajectory_header(d):
    return ["t", "particle_id"] + [f"x_{k + 1}" for k in range(d)] + [f"v_{k + 1}" for k in range(d)]
