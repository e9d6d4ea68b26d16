"""CSV tables with a provenance header, and legacy-ASCII VTK snapshots."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .mesh import TriMesh

SCHEMAS = {
    "accuracy": ("n", "h", "dt", "vel_l2_error", "vel_rate", "p_l2_error", "p_rate"),
    "stats": ("t", "energy", "enstrophy", "div_norm", "rel_vel_err", "rel_p_err", "lyapunov"),
    "probes": ("t", "case", "x_probe", "p_perturbation"),
    "acoustic_summary": ("case", "final_l2_p_error", "reduction_pct"),
    "acoustic_errors": ("t", "case", "l2_p_error"),
    "wave_speed": ("case", "t_peak_first", "t_peak_second", "speed"),
}


def fmt(x) -> str:
    """Shortest round-trip decimal for floats; NaN written as ``nan``."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def write_csv(path, schema: str, rows, header_lines=()) -> Path:
    """Write ``rows`` (sequences or dicts) under ``SCHEMAS[schema]``.

    Every file starts with ``# key=value`` comment lines (the scenario configuration).
    """
    cols = SCHEMAS[schema]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            vals = [r[c] for c in cols] if isinstance(r, dict) else list(r)
            if len(vals) != len(cols):
                raise ValueError(f"row {vals!r} does not match schema {cols}")
            w.writerow([fmt(v) for v in vals])
    return path


def read_csv(path):
    """Return ``(header_lines, columns, rows)`` with rows as lists of strings."""
    header, rows = [], []
    with Path(path).open() as fh:
        lines = fh.read().splitlines()
    k = 0
    while k < len(lines) and lines[k].startswith("#"):
        header.append(lines[k][1:].strip())
        k += 1
    reader = csv.reader(lines[k:])
    cols = next(reader)
    rows = [r for r in reader if r]
    return header, cols, rows


def write_vtk(path, mesh: TriMesh, velocity=None, pressure=None, vorticity=None,
              title: str = "nudgefem snapshot") -> Path:
    """Legacy ASCII v3.0 unstructured grid of the mesh triangles (cell type 5).

    Point arrays are sampled at the mesh vertices: ``velocity`` (nv, 2) written with
    z = 0, ``pressure`` and ``vorticity`` (nv,). Missing arrays are written as zeros.
    """
    nv, nt = mesh.n_vertices, mesh.n_triangles
    vel = np.zeros((nv, 2)) if velocity is None else np.asarray(velocity, dtype=float).reshape(nv, 2)
    pre = np.zeros(nv) if pressure is None else np.asarray(pressure, dtype=float).reshape(nv)
    vor = np.zeros(nv) if vorticity is None else np.asarray(vorticity, dtype=float).reshape(nv)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pts = np.column_stack([mesh.vertices, np.zeros(nv)])
    cells = np.column_stack([np.full(nt, 3), mesh.triangles])
    with path.open("w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title.replace("\n", " ")[:255] + "\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        np.savetxt(fh, pts, fmt="%.17g")
        fh.write(f"CELLS {nt} {4 * nt}\n")
        np.savetxt(fh, cells, fmt="%d")
        fh.write(f"CELL_TYPES {nt}\n")
        np.savetxt(fh, np.full(nt, 5), fmt="%d")
        fh.write(f"POINT_DATA {nv}\n")
        fh.write("VECTORS velocity double\n")
        np.savetxt(fh, np.column_stack([vel, np.zeros(nv)]), fmt="%.17g")
        for name, arr in (("pressure", pre), ("vorticity", vor)):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, arr, fmt="%.17g")
    return path
