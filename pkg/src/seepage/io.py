"""Legacy ASCII VTK snapshots and CSV time series."""
from __future__ import annotations

import numpy as np


def _fmt(a):
    return " ".join(f"{v:.17g}" for v in np.asarray(a, float).ravel())


def write_vtk_triangles(path, coords, triangles, vectors=None, scalars=None):
    """Unstructured grid of triangles (cell type 5) with point data.

    ``vectors`` and ``scalars`` map names to per-vertex arrays; 2D vectors
    are padded with a zero z component.
    """
    coords = np.asarray(coords, float)
    tris = np.asarray(triangles, np.int64)
    n = len(coords)
    out = ["# vtk DataFile Version 3.0", "seepage snapshot", "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {n} double"]
    out += [_fmt((x, y, 0.0)) for x, y in coords[:, :2]]
    out.append(f"CELLS {len(tris)} {4 * len(tris)}")
    out += [f"3 {a} {b} {c}" for a, b, c in tris]
    out.append(f"CELL_TYPES {len(tris)}")
    out += ["5"] * len(tris)
    out += _point_data(n, vectors, scalars)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")


def write_vtk_polyline(path, coords, scalars=None):
    """Open polyline through ``coords`` (one VTK_POLY_LINE cell) with point scalars."""
    coords = np.asarray(coords, float)
    n = len(coords)
    out = ["# vtk DataFile Version 3.0", "seepage porous layer", "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {n} double"]
    out += [_fmt((x, y, 0.0)) for x, y in coords[:, :2]]
    out += [f"CELLS 1 {n + 1}", " ".join(map(str, [n, *range(n)])), "CELL_TYPES 1", "4"]
    out += _point_data(n, None, scalars)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")


def _point_data(n, vectors, scalars):
    out = [f"POINT_DATA {n}"]
    for name, v in (vectors or {}).items():
        v = np.asarray(v, float).reshape(n, -1)
        if v.shape[1] == 2:
            v = np.column_stack([v, np.zeros(n)])
        out.append(f"VECTORS {name} double")
        out += [_fmt(row) for row in v]
    for name, s in (scalars or {}).items():
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [f"{x:.17g}" for x in np.asarray(s, float).reshape(n)]
    return out


class CsvSeries:
    """Append-only CSV: header once, one flushed row per completed step, 17 significant digits."""

    def __init__(self, path, columns):
        self.columns = tuple(columns)
        self._fh = open(path, "w", encoding="ascii", newline="")
        self._fh.write(",".join(self.columns) + "\n")
        self._fh.flush()

    def write(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        self._fh.write(",".join(f"{float(v):.17g}" for v in values) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_csv(path):
    """Header and float rows of a series written by :class:`CsvSeries`."""
    with open(path, encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    return header, np.array(rows).reshape(-1, len(header))
