"""Triangular meshes with tagged boundaries and ordered 1D boundary traces.

The porous layer lives on a chain of boundary edges (the trace).  For the
two-reservoir geometry part of that chain is *sealed*: it carries trace
segments but no fluid triangle sits on top of it.  Such edges are stored as
ordinary tagged boundary edges that belong to zero triangles.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# default integer boundary tags
TAG_INLET = 1
TAG_OUTLET = 2
TAG_LAYER = 3
TAG_WALL = 4
TAG_ELASTIC = 5

DEFAULT_CHANNEL_TAGS = {"left": TAG_INLET, "right": TAG_OUTLET,
                        "bottom": TAG_LAYER, "top": TAG_ELASTIC}


class MeshError(ValueError):
    pass


class OrientationError(MeshError):
    pass


class NonManifoldError(MeshError):
    pass


class MeshParseError(MeshError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class TagNotFoundError(MeshError, LookupError):
    pass


class TraceTopologyError(MeshError):
    pass


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Bulk triangulation.

    ``boundary_edges`` is (k, 2) vertex pairs with ``boundary_tags`` (k,).
    Construction validates every structural invariant.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    h: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(np.reshape(self.vertices, (-1, 2)), float))
        object.__setattr__(self, "triangles", _frozen(np.reshape(self.triangles, (-1, 3)), np.int64))
        object.__setattr__(self, "boundary_edges", _frozen(np.reshape(self.boundary_edges, (-1, 2)), np.int64))
        object.__setattr__(self, "boundary_tags", _frozen(np.ravel(self.boundary_tags), np.int64))
        validate(self)
        object.__setattr__(self, "h", _frozen(triangle_diameters(self.vertices, self.triangles), float))

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def areas(self, coords=None):
        return signed_areas(self.vertices if coords is None else coords, self.triangles)

    def fluid_vertices(self):
        """Sorted ids of vertices that belong to at least one triangle."""
        return np.unique(self.triangles)

    def edges_with_tag(self, tag):
        return np.flatnonzero(self.boundary_tags == tag)

    def vertices_with_tag(self, tag):
        return np.unique(self.boundary_edges[self.boundary_tags == tag])

    def interior_edges(self):
        return [e for e, tris in edge_triangle_map(self.triangles).items() if len(tris) == 2]

    def connected_components(self):
        """Label triangles by connected component (shared edges)."""
        parent = list(range(self.n_triangles))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for tris in edge_triangle_map(self.triangles).values():
            if len(tris) == 2:
                a, b = find(tris[0]), find(tris[1])
                if a != b:
                    parent[max(a, b)] = min(a, b)
        roots = np.array([find(i) for i in range(self.n_triangles)])
        _, labels = np.unique(roots, return_inverse=True)
        return labels


def signed_areas(vertices, triangles):
    p = vertices[triangles]
    return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))


def triangle_diameters(vertices, triangles):
    p = vertices[triangles]
    e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    return np.linalg.norm(e, axis=2).max(axis=1)


def edge_triangle_map(triangles):
    out = defaultdict(list)
    for t, (a, b, c) in enumerate(triangles.tolist()):
        for u, v in ((a, b), (b, c), (c, a)):
            out[(u, v) if u < v else (v, u)].append(t)
    return out


def validate(mesh):
    """Check the structural invariants, raising a :class:`MeshError` naming the failure."""
    nv = len(mesh.vertices)
    tris, bedges, tags = mesh.triangles, mesh.boundary_edges, mesh.boundary_tags
    if not np.all(np.isfinite(mesh.vertices)):
        raise MeshError("vertex coordinates must be finite")
    if len(tags) != len(bedges):
        raise MeshError("boundary tag count does not match boundary edge count")
    for name, idx in (("triangle", tris), ("boundary edge", bedges)):
        bad = np.flatnonzero(((idx < 0) | (idx >= nv)).any(axis=1)) if idx.size else []
        if len(bad):
            raise MeshError(f"vertex index out of range in {name} {bad[0]}")
    area = signed_areas(mesh.vertices, tris)
    bad = np.flatnonzero(area <= 0.0)
    if len(bad):
        raise OrientationError(f"triangle {bad[0]} has non-positive signed area {area[bad[0]]:.3e}")
    bad = np.flatnonzero(tags == 0)
    if len(bad):
        raise MeshError(f"boundary edge {bad[0]} carries tag 0")

    e2t = edge_triangle_map(tris)
    for e, ts in e2t.items():
        if len(ts) > 2:
            raise NonManifoldError(f"non-manifold edge {e} shared by triangles {ts}")
    seen = {}
    for k, (u, v) in enumerate(bedges.tolist()):
        key = (u, v) if u < v else (v, u)
        if u == v:
            raise MeshError(f"boundary edge {k} is degenerate")
        if key in seen:
            raise MeshError(f"boundary edges {seen[key]} and {k} coincide")
        seen[key] = k
        if len(e2t.get(key, ())) == 2:
            raise MeshError(f"boundary edge {k} is interior (shared by two triangles)")
    for e, ts in e2t.items():
        if len(ts) == 1 and e not in seen:
            raise MeshError(f"edge {e} of triangle {ts[0]} lies on the boundary but is untagged")
    # vertices outside every triangle must at least sit on a trace-only edge
    used = np.zeros(nv, bool)
    used[tris.ravel()] = True
    used[bedges.ravel()] = True
    if not used.all():
        raise MeshError(f"vertex {np.flatnonzero(~used)[0]} is not referenced")


def generate_channel_mesh(length, height, nx, ny, tag_scheme=None, origin=(0.0, 0.0)):
    """Structured ``nx`` x ``ny`` grid of a rectangle, cells split lower-left to upper-right.

    Vertex ``(i, j)`` has id ``j * (nx + 1) + i``.
    """
    if not (length > 0 and height > 0):
        raise ValueError("channel length and height must be positive")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError("nx and ny must be integers >= 1")
    nx, ny = int(nx), int(ny)
    tags = dict(DEFAULT_CHANNEL_TAGS)
    tags.update(tag_scheme or {})
    x = origin[0] + length * np.arange(nx + 1) / nx
    y = origin[1] + height * np.arange(ny + 1) / ny
    X, Y = np.meshgrid(x, y)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    tris, edges, etags = _grid_connectivity(nx, ny, 0, tags)
    return Mesh(verts, tris, edges, etags)


def _grid_connectivity(nx, ny, offset, tags):
    def vid(i, j):
        return offset + j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    edges, etags = [], []
    for i in range(nx):
        edges.append((vid(i, 0), vid(i + 1, 0)))
        etags.append(tags["bottom"])
    for j in range(ny):
        edges.append((vid(nx, j), vid(nx, j + 1)))
        etags.append(tags["right"])
    for i in range(nx, 0, -1):
        edges.append((vid(i, ny), vid(i - 1, ny)))
        etags.append(tags["top"])
    for j in range(ny, 0, -1):
        edges.append((vid(0, j), vid(0, j - 1)))
        etags.append(tags["left"])
    return tris, edges, etags


@dataclass(frozen=True)
class ReservoirGeometry:
    """Two rectangles standing on a common bottom line y = 0, joined by a sealed span.

    Reservoir 1 occupies [0, width1] x [0, height1]; reservoir 2 starts
    ``gap`` to the right of it.  The porous layer covers the full bottom.
    """

    width1: float = 1.0
    height1: float = 1.0
    gap: float = 1.0
    width2: float = 1.0
    height2: float = 1.0
    cells_per_unit: int = 16

    def cells(self):
        n = self.cells_per_unit
        return (max(1, round(self.width1 * n)), max(1, round(self.height1 * n)),
                max(1, round(self.gap * n)),
                max(1, round(self.width2 * n)), max(1, round(self.height2 * n)))

    @property
    def layer_span(self):
        return 0.0, self.width1 + self.gap + self.width2

    @property
    def windows(self):
        """Arc-length windows of the layer lying under reservoir 1 and reservoir 2."""
        x2 = self.width1 + self.gap
        return (0.0, self.width1), (x2, x2 + self.width2)


def generate_two_reservoir_mesh(geom: ReservoirGeometry):
    if geom.gap <= 0:
        raise ValueError("reservoirs must be disjoint: gap must be positive")
    if min(geom.width1, geom.height1, geom.width2, geom.height2) <= 0:
        raise ValueError("reservoir dimensions must be positive")
    if geom.cells_per_unit < 1:
        raise ValueError("cells_per_unit must be >= 1")
    nx1, ny1, ng, nx2, ny2 = geom.cells()
    x2 = geom.width1 + geom.gap

    def grid(x0, w, h, nx, ny):
        X, Y = np.meshgrid(x0 + w * np.arange(nx + 1) / nx, h * np.arange(ny + 1) / ny)
        return np.column_stack([X.ravel(), Y.ravel()])

    v1 = grid(0.0, geom.width1, geom.height1, nx1, ny1)
    v2 = grid(x2, geom.width2, geom.height2, nx2, ny2)
    off2 = len(v1)
    t1, e1, g1 = _grid_connectivity(nx1, ny1, 0, {"bottom": TAG_LAYER, "right": TAG_WALL,
                                                  "top": TAG_INLET, "left": TAG_WALL})
    t2, e2, g2 = _grid_connectivity(nx2, ny2, off2, {"bottom": TAG_LAYER, "right": TAG_WALL,
                                                     "top": TAG_OUTLET, "left": TAG_WALL})
    # sealed span: trace-only vertices strictly between the reservoirs
    xs = geom.width1 + geom.gap * np.arange(1, ng) / ng
    vs = np.column_stack([xs, np.zeros_like(xs)])
    offs = off2 + len(v2)
    chain = [nx1] + list(range(offs, offs + len(vs))) + [off2]
    es = [(chain[k], chain[k + 1]) for k in range(len(chain) - 1)]
    verts = np.vstack([v1, v2, vs])
    return Mesh(verts, t1 + t2, e1 + e2 + es, g1 + g2 + [TAG_LAYER] * len(es))


def write_mesh(mesh, path):
    lines = ["SEEPMESH 1", "$Nodes", str(mesh.n_vertices)]
    lines += [f"{i} {x!r} {y!r}" for i, (x, y) in enumerate(mesh.vertices.tolist())]
    lines += ["$Triangles", str(mesh.n_triangles)]
    lines += [f"{i} {a} {b} {c}" for i, (a, b, c) in enumerate(mesh.triangles.tolist())]
    lines += ["$BoundaryEdges", str(len(mesh.boundary_edges))]
    lines += [f"{i} {a} {b} {t}" for i, ((a, b), t)
              in enumerate(zip(mesh.boundary_edges.tolist(), mesh.boundary_tags.tolist()))]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path):
    """Parse a SEEPMESH file; the result is validated on construction."""
    tokens = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        text = raw.split("#", 1)[0].split()
        if text:
            tokens.append((lineno, text))
    if not tokens:
        raise MeshParseError("empty file", 1)
    lineno, head = tokens[0]
    if head != ["SEEPMESH", "1"]:
        raise MeshParseError(f"expected header 'SEEPMESH 1', got {' '.join(head)!r}", lineno)
    pos = 1

    def section(name, width, conv):
        nonlocal pos
        if pos >= len(tokens) or tokens[pos][1] != [name]:
            raise MeshParseError(f"expected {name}", tokens[min(pos, len(tokens) - 1)][0])
        pos += 1
        if pos >= len(tokens) or len(tokens[pos][1]) != 1:
            raise MeshParseError(f"expected entry count after {name}", tokens[min(pos, len(tokens) - 1)][0])
        try:
            count = int(tokens[pos][1][0])
        except ValueError:
            raise MeshParseError("entry count is not an integer", tokens[pos][0]) from None
        pos += 1
        rows = []
        for k in range(count):
            if pos >= len(tokens):
                raise MeshParseError(f"{name}: expected {count} entries, file ended after {k}", tokens[-1][0])
            ln, fields = tokens[pos]
            if len(fields) != width + 1:
                raise MeshParseError(f"{name}: expected {width + 1} fields, got {len(fields)}", ln)
            try:
                idx = int(fields[0])
                vals = [conv[j](f) for j, f in enumerate(fields[1:])]
            except ValueError as exc:
                raise MeshParseError(f"{name}: {exc}", ln) from None
            if idx != k:
                raise MeshParseError(f"{name}: ids must be 0..n-1 in order, got {idx} at position {k}", ln)
            rows.append(vals)
            pos += 1
        return rows

    nodes = section("$Nodes", 2, (float, float))
    tris = section("$Triangles", 3, (int, int, int))
    edges = section("$BoundaryEdges", 3, (int, int, int))
    if pos != len(tokens):
        raise MeshParseError("unexpected trailing content", tokens[pos][0])
    e = np.array(edges, dtype=np.int64).reshape(-1, 3)
    return Mesh(np.array(nodes, float).reshape(-1, 2), np.array(tris, np.int64).reshape(-1, 3),
                e[:, :2], e[:, 2])


@dataclass(frozen=True, eq=False)
class TraceMesh:
    """Ordered chain of boundary segments; segment k joins trace vertices k and k+1.

    ``vertex_ids`` map trace vertices to mesh vertices (-1 for standalone
    traces), ``triangles`` give the fluid triangle under each segment (-1 on
    sealed spans), ``normals`` are outward normals of the fluid domain.
    """

    coords: np.ndarray
    vertex_ids: np.ndarray
    parent_edges: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray
    tag: int = TAG_LAYER

    def __post_init__(self):
        for name, dtype in (("coords", float), ("vertex_ids", np.int64), ("parent_edges", np.int64),
                            ("triangles", np.int64), ("normals", float)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))

    @classmethod
    def from_points(cls, points, normal=(0.0, -1.0)):
        """Standalone trace through ``points`` (no parent mesh, every segment fluid-free)."""
        pts = np.asarray(points, float)
        if pts.ndim == 1:
            pts = np.column_stack([pts, np.zeros_like(pts)])
        ns = len(pts) - 1
        return cls(pts, -np.ones(len(pts), np.int64), -np.ones(ns, np.int64),
                   -np.ones(ns, np.int64), np.tile(normal, (ns, 1)))

    @property
    def n_vertices(self):
        return len(self.coords)

    @property
    def n_segments(self):
        return len(self.coords) - 1

    @property
    def segments(self):
        k = np.arange(self.n_segments)
        return np.column_stack([k, k + 1])

    @property
    def lengths(self):
        return np.linalg.norm(np.diff(self.coords, axis=0), axis=1)

    @property
    def arc(self):
        return np.concatenate([[0.0], np.cumsum(self.lengths)])

    @property
    def tangents(self):
        return np.diff(self.coords, axis=0) / self.lengths[:, None]

    @property
    def fluid_segments(self):
        return self.triangles >= 0

    def vertex_has_fluid(self):
        """True for trace vertices touching at least one fluid-coupled segment."""
        out = np.zeros(self.n_vertices, bool)
        f = np.flatnonzero(self.fluid_segments)
        out[f] = True
        out[f + 1] = True
        return out


def extract_trace(mesh: Mesh, tag=TAG_LAYER) -> TraceMesh:
    """Order the boundary edges carrying ``tag`` into a single chain."""
    eids = mesh.edges_with_tag(tag)
    if len(eids) == 0:
        raise TagNotFoundError(f"no boundary edge carries tag {tag}")
    adj = defaultdict(list)
    for e in eids.tolist():
        a, b = mesh.boundary_edges[e].tolist()
        adj[a].append((b, e))
        adj[b].append((a, e))
    if any(len(n) > 2 for n in adj.values()):
        raise TraceTopologyError(f"tag {tag} edges branch")
    ends = [v for v, n in adj.items() if len(n) == 1]
    if len(ends) != 2:
        raise TraceTopologyError(f"tag {tag} edges do not form a single open chain")
    start = min(ends, key=lambda v: tuple(mesh.vertices[v]))
    order, parents = [start], []
    prev = None
    while True:
        nxt = [(w, e) for w, e in adj[order[-1]] if e != prev]
        if not nxt:
            break
        w, e = nxt[0]
        parents.append(e)
        order.append(w)
        prev = e
    if len(parents) != len(eids):
        raise TraceTopologyError(f"tag {tag} edges are disconnected "
                                 f"({len(parents)} of {len(eids)} edges reachable)")
    coords = mesh.vertices[order]
    e2t = edge_triangle_map(mesh.triangles)
    tris = []
    for a, b in zip(order[:-1], order[1:]):
        ts = e2t.get((a, b) if a < b else (b, a), [])
        tris.append(ts[0] if ts else -1)
    tris = np.array(tris, np.int64)
    t = np.diff(coords, axis=0)
    t /= np.linalg.norm(t, axis=1)[:, None]
    rot = np.column_stack([t[:, 1], -t[:, 0]])
    sign = 1.0
    fluid = np.flatnonzero(tris >= 0)
    if len(fluid):
        signs = set()
        for k in fluid.tolist():
            third = set(mesh.triangles[tris[k]].tolist()) - {order[k], order[k + 1]}
            inward = mesh.vertices[third.pop()] - coords[k]
            signs.add(-1.0 if rot[k] @ inward > 0 else 1.0)
        if len(signs) > 1:
            raise TraceTopologyError(f"fluid lies on both sides of the tag {tag} chain")
        sign = signs.pop()
    return TraceMesh(coords, np.array(order), np.array(parents), tris, sign * rot, tag)
