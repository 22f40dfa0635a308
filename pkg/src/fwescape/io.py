"""Versioned CSV / JSON emission and reading.

CSV files start with a ``# format_version=X.Y`` line, then a header row; JSON
documents carry a top-level ``format_version`` key. Readers reject files whose
major version differs from ours.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, is_dataclass

import numpy as np

FORMAT_VERSION = "1.0"


class FormatVersionError(ValueError):
    pass


def _major(v: str) -> int:
    try:
        return int(str(v).split(".")[0])
    except ValueError as exc:
        raise FormatVersionError(f"unparseable format version {v!r}") from exc


def check_version(v) -> None:
    if v is None or _major(v) != _major(FORMAT_VERSION):
        raise FormatVersionError(f"format version {v!r} incompatible with {FORMAT_VERSION}")


def _fmt(x) -> str:
    if isinstance(x, (str, bool)):
        return str(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return repr(x) if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))


def write_csv(path, header, rows) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path):
    """Returns (header, float array of rows)."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# format_version="):
            raise FormatVersionError(f"{path}: missing format version line")
        check_version(first.split("=", 1)[1])
        rd = csv.reader(fh)
        header = next(rd)
        data = [[float(v) for v in row] for row in rd]
    return header, np.array(data, dtype=float).reshape(-1, len(header))


def to_jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def write_json(path, doc: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    out = {"format_version": FORMAT_VERSION}
    out.update(to_jsonable(doc))
    with open(path, "w", newline="\n") as fh:
        json.dump(out, fh, indent=2, sort_keys=False)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    check_version(doc.get("format_version"))
    return doc


# --------------------------------------------------------------------------
# domain writers


def write_trajectory(path, traj) -> None:
    n = len(traj)
    H = traj.H if traj.H is not None else np.full(n, np.nan)
    psi = traj.psi if traj.psi is not None else np.full(n, np.nan)
    gam = traj.gamma if traj.gamma is not None else np.full(n, np.nan)
    if traj.m is not None:
        th = traj.meta.get("theta", traj.x[:, 0])
        ph = traj.meta.get("phi", traj.x[:, 1])
        header = ["t", "s", "theta", "phi", "mx", "my", "mz", "p1", "p2", "H_resid", "S_cum", "psi", "gamma"]
        cols = [traj.t, traj.s, th, ph, traj.m[:, 0], traj.m[:, 1], traj.m[:, 2]]
    else:
        header = ["t", "s", "x1", "x2", "p1", "p2", "H_resid", "S_cum", "psi", "gamma"]
        cols = [traj.t, traj.s, traj.x[:, 0], traj.x[:, 1]]
    cols += [traj.p[:, 0], traj.p[:, 1], H, traj.S, psi, gam]
    write_csv(path, header, zip(*cols))


def write_landscape(path, land) -> None:
    X, Y = np.meshgrid(land.xs, land.ys, indexing="ij")
    header = ["x1", "x2", "norm2"]
    cols = [X.ravel(), Y.ravel(), land.values.ravel()]
    for k, v in (land.terms or {}).items():
        if v.ndim == 3:  # vector field at each node
            header += [f"{k}{c}" for c in "xyz"[:v.shape[-1]]]
            cols += [v[..., i].ravel() for i in range(v.shape[-1])]
        else:
            header.append(k)
            cols.append(v.ravel())
    write_csv(path, header, zip(*cols))


def write_events(path, events) -> None:
    rows = []
    for e in events:
        rows.append([e.realization, e.exit_time, *e.exit_point, e.section_y])
    dim = len(events[0].exit_point) if events else 2
    coords = ["mx", "my", "mz"] if dim == 3 else ["x1", "x2"]
    write_csv(path, ["realization", "exit_time", *coords, "section_y"], rows)


def write_event_path(path, event) -> None:
    dim = event.path.shape[1] - 1
    coords = ["mx", "my", "mz"] if dim == 3 else ["x1", "x2"]
    write_csv(path, ["t", *coords], event.path)
