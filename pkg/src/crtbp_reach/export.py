"""CSV and JSON persistence.

Floats are written with ``repr``, the shortest string that parses back to the
same double, so JSON and CSV round-trips are bit-exact.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dynamics import SystemParams
from .integrator import DiscreteTrajectory

TRAJECTORY_COLUMNS = ("t", "x", "y", "vx", "vy", "ux", "uy")
CROSSING_COLUMNS = ("t", "x", "y", "vx", "vy", "branch_id")
REACH_COLUMNS = ("theta", "x", "vx", "converged")


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return repr(v)


def to_jsonable(obj):
    """Convert numpy containers and scalars to plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
    return Path(path)


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(rows[0]))


# --------------------------------------------------------------------------
# Trajectories


def trajectory_rows(traj: DiscreteTrajectory):
    t = traj.times
    u = np.vstack([traj.controls, np.zeros((1, 2))])
    for k in range(len(t)):
        yield (t[k], *traj.states[k], *u[k])


def write_trajectory_csv(path: Path, traj: DiscreteTrajectory) -> Path:
    """Columns t,x,y,vx,vy,ux,uy; the last row carries a zero control."""
    return write_csv(path, TRAJECTORY_COLUMNS, trajectory_rows(traj))


def trajectory_to_dict(traj: DiscreteTrajectory) -> dict:
    p = traj.params
    return {
        "h": traj.h,
        "params": {"mu": p.mu, "h": p.h, "u_max": p.u_max},
        "states": traj.states.tolist(),
        "controls": traj.controls.tolist(),
    }


def trajectory_from_dict(d: dict) -> DiscreteTrajectory:
    p = d["params"]
    controls = np.array(d["controls"], dtype=float).reshape(-1, 2)
    return DiscreteTrajectory(np.array(d["states"], dtype=float), controls, float(d["h"]), SystemParams(**p))


def save_trajectory_json(path: Path, traj: DiscreteTrajectory) -> Path:
    return write_json(path, trajectory_to_dict(traj))


def load_trajectory_json(path: Path) -> DiscreteTrajectory:
    return trajectory_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --------------------------------------------------------------------------
# Section data


def write_crossings_csv(path: Path, crossings) -> Path:
    rows = ((c.time, *c.state, c.trajectory_id) for c in crossings)
    return write_csv(path, CROSSING_COLUMNS, rows)


def write_reach_csv(path: Path, reach_set) -> Path:
    def rows():
        for p in reach_set.points:
            x, vx = p.point if p.point is not None else (math.nan, math.nan)
            yield (p.theta, x, vx, bool(p.converged))

    return write_csv(path, REACH_COLUMNS, rows())


# --------------------------------------------------------------------------
# Hashing


def git_blob_hash(data: bytes) -> str:
    """SHA-1 of ``data`` framed the way git hashes a blob."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def tree_hash(files: dict[str, bytes]) -> str:
    h = hashlib.sha256()
    for name in sorted(files):
        h.update(name.encode("utf-8") + b"\0" + git_blob_hash(files[name]).encode("ascii") + b"\n")
    return h.hexdigest()
