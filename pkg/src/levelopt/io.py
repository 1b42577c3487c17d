"""Writers for VTK legacy fields and CSV exports (histories, contours, gradients)."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .mesh import Mesh


def _fmt(v) -> str:
    return repr(float(v))


def write_vtk(path, mesh: Mesh, fields: dict, title="levelopt") -> None:
    """Legacy ASCII UNSTRUCTURED_GRID with POINT_DATA scalars (z = 0)."""
    path = Path(path)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n} double")
    lines.extend(f"{_fmt(x)} {_fmt(y)} 0.0" for x, y in mesh.vertices)
    lines.append(f"CELLS {mesh.nt} {4 * mesh.nt}")
    lines.extend(f"3 {i} {j} {k}" for i, j, k in mesh.triangles)
    lines.append(f"CELL_TYPES {mesh.nt}")
    lines.extend("5" for _ in range(mesh.nt))
    lines.append(f"POINT_DATA {mesh.n}")
    for name, values in fields.items():
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n,):
            raise ValueError(f"field {name!r} has shape {values.shape}, expected ({mesh.n},)")
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_fmt(v) for v in values)
    path.write_text("\n".join(lines) + "\n")


def read_vtk_scalars(path) -> dict:
    """Point scalars of a file written by :func:`write_vtk`."""
    tokens = Path(path).read_text().split("\n")
    out = {}
    i = 0
    npts = None
    while i < len(tokens):
        line = tokens[i].strip()
        if line.startswith("POINT_DATA"):
            npts = int(line.split()[1])
        elif line.startswith("SCALARS") and npts is not None:
            name = line.split()[1]
            vals = tokens[i + 2 : i + 2 + npts]
            out[name] = np.array([float(v) for v in vals])
            i += 1 + npts
        i += 1
    return out


def write_polylines_csv(path, polylines) -> None:
    """Columns polyline_id, t_or_index, x, y."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["polyline_id", "t_or_index", "x", "y"])
        for pid, line in enumerate(polylines):
            for k, (x, y) in enumerate(line):
                w.writerow([pid, k, _fmt(x), _fmt(y)])


def write_trajectory_csv(path, times, points) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["polyline_id", "t_or_index", "x", "y"])
        for t, (x, y) in zip(times, points):
            w.writerow([0, _fmt(t), _fmt(x), _fmt(y)])


def read_polylines_csv(path) -> list[np.ndarray]:
    if len(Path(path).read_text().splitlines()) < 2:
        return []
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return [data[data[:, 0] == pid][:, 2:] for pid in np.unique(data[:, 0])]


def write_history_csv(path, history) -> None:
    """Columns iter, J, lambda, gradnorm."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "J", "lambda", "gradnorm"])
        for r in history.records:
            w.writerow([r.iteration, _fmt(r.cost), _fmt(r.step), _fmt(r.gradient_norm)])


def write_gradient_csv(path, report) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "partial"])
        for i, v in zip(report.free, report.partials):
            w.writerow([int(i), _fmt(v)])


def read_nodal(path) -> np.ndarray:
    return np.loadtxt(path, ndmin=1)
