"""CSV readers for the trajectory and sweep-results schemas."""

from __future__ import annotations

import csv
import math
from pathlib import Path

from .figspec import FigureSpecError

TRAJECTORY_FIXED = ("step", "train_loss", "gen_loss", "gen_loss_stderr")
RESULT_REQUIRED = (
    "seed",
    "mt_benefit",
    "min_loss_single",
    "min_loss_multi",
    "status",
)


def _float(s):
    return math.nan if s == "" else float(s)


def read_trajectory(path):
    """One trajectory CSV -> dict of column -> list, plus singular values."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in TRAJECTORY_FIXED + ("source",) if c not in cols]
        if missing:
            raise FigureSpecError(f"{path} lacks trajectory columns {missing}")
        sv_cols = [c for c in cols if c.startswith("s_")]
        rows = list(reader)
    if not rows:
        raise FigureSpecError(f"{path} holds no trajectory rows")
    out = {
        "step": [int(r["step"]) for r in rows],
        "train_loss": [_float(r["train_loss"]) for r in rows],
        "gen_loss": [_float(r["gen_loss"]) for r in rows],
        "gen_loss_stderr": [_float(r["gen_loss_stderr"]) for r in rows],
        "top_sv": [_float(r[sv_cols[0]]) for r in rows] if sv_cols else None,
        "source": rows[0]["source"],
    }
    return out


def read_results(path, required_coords=()):
    """Sweep results CSV -> list of row dicts with floats parsed."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in tuple(required_coords) + RESULT_REQUIRED if c not in cols]
        if missing:
            raise FigureSpecError(f"{path} lacks results columns {missing}")
        rows = []
        for raw in reader:
            if raw["status"] != "ok":
                continue
            row = dict(raw)
            for key in set(cols) - {"status"}:
                try:
                    row[key] = float(raw[key])
                except ValueError:
                    pass
            rows.append(row)
    if not rows:
        raise FigureSpecError(f"{path} holds no usable result rows")
    return rows
