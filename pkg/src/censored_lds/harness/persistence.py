"""Trajectory files.

A trajectory is a CSV with header ``t,observed,set_id,x_1,...,x_d`` (one
row per step, ``t = 1..T+1``) plus a YAML sidecar ``<name>.meta.yaml``
holding the seed, the system matrix, the schedule descriptor and the table
of distinct sets that ``set_id`` indexes.  Floats are written with
``repr`` (shortest round-trip form), so save/load is lossless.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..sets import set_from_dict
from ..simulator import CensoredTrajectory
from .config import dump_yaml, load_yaml

__all__ = ["TrajectoryFormatError", "save_trajectory", "load_trajectory", "meta_path"]


class TrajectoryFormatError(ValueError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(f"row {row}: {message}" if row is not None else message)
        self.row = row


def meta_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".meta.yaml")


def _fmt(v: float) -> str:
    return repr(float(v))


def save_trajectory(traj: CensoredTrajectory, path, A_star=None, schedule: dict | None = None) -> Path:
    """Write the CSV and its sidecar; returns the CSV path.

    Unobserved rows of a censored view are written with empty state fields.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table: list[dict] = []
    index: dict[str, int] = {}
    ids = []
    by_obj: dict[int, int] = {}
    for s in traj.sets:
        if id(s) in by_obj:
            ids.append(by_obj[id(s)])
            continue
        desc = s.to_dict()
        key = json.dumps(desc, sort_keys=True)
        if key not in index:
            index[key] = len(table)
            table.append(desc)
        by_obj[id(s)] = index[key]
        ids.append(index[key])

    d = traj.d
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "observed", "set_id"] + [f"x_{j + 1}" for j in range(d)])
        for i in range(traj.states.shape[0]):
            row = traj.states[i]
            vals = ["" for _ in range(d)] if np.all(np.isnan(row)) else [_fmt(v) for v in row]
            w.writerow([i + 1, int(traj.observed[i]), ids[i]] + vals)

    meta = {
        "seed": traj.seed,
        "T": traj.T,
        "d": d,
        "censored": bool(traj.censored),
        "A_star": None if A_star is None else np.atleast_2d(A_star).tolist(),
        "schedule": schedule,
        "sets": table,
    }
    dump_yaml(meta, meta_path(path))
    return path


def load_trajectory(path) -> tuple[CensoredTrajectory, dict]:
    """Read a trajectory and its sidecar; raises TrajectoryFormatError with the row number."""
    path = Path(path)
    mpath = meta_path(path)
    if not mpath.exists():
        raise TrajectoryFormatError(f"missing metadata file {mpath}")
    meta = load_yaml(mpath) or {}
    try:
        sets_table = [set_from_dict(s) for s in meta["sets"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise TrajectoryFormatError(f"bad set table in {mpath}: {exc}") from None

    states, observed, sets = [], [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:3] != ["t", "observed", "set_id"]:
            raise TrajectoryFormatError("bad header; expected t,observed,set_id,x_1,...", 1)
        d = len(header) - 3
        if d < 1:
            raise TrajectoryFormatError("no state columns", 1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 3:
                raise TrajectoryFormatError(f"expected {d + 3} fields, got {len(row)}", lineno)
            try:
                t = int(row[0])
                obs = int(row[1])
                sid = int(row[2])
                x = [float(v) if v != "" else float("nan") for v in row[3:]]
            except ValueError as exc:
                raise TrajectoryFormatError(f"unparseable field ({exc})", lineno) from None
            if t != lineno - 1:
                raise TrajectoryFormatError(f"expected t={lineno - 1}, got {t}", lineno)
            if obs not in (0, 1):
                raise TrajectoryFormatError("observed must be 0 or 1", lineno)
            if not 0 <= sid < len(sets_table):
                raise TrajectoryFormatError(f"set_id {sid} not in metadata set table", lineno)
            if obs and any(np.isnan(x)):
                raise TrajectoryFormatError("observed state has empty fields", lineno)
            states.append(x)
            observed.append(bool(obs))
            sets.append(sets_table[sid])
    if len(states) < 2:
        raise TrajectoryFormatError("trajectory needs at least two rows")
    states_arr = np.array(states)
    censored = bool(meta.get("censored", False)) or bool(np.any(np.isnan(states_arr)))
    traj = CensoredTrajectory(states_arr, np.array(observed), sets, meta.get("seed"), censored=censored)
    return traj, meta
