"""P1 finite-element machinery: quadrature, dof numbering, element kernels, sparse assembly.

All fields are continuous piecewise linear.  Element kernels are vectorised
over triangles and return dense local matrices; :class:`CooBuilder` gathers
them into a CSR matrix in a fixed order, so assembly is bit-reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TAG_ELASTIC, Mesh, TraceMesh


class ConfigurationError(ValueError):
    pass


class SingularMatrixError(RuntimeError):
    def __init__(self, message, pivot_row=None):
        self.pivot_row = pivot_row
        super().__init__(message if pivot_row is None else f"{message} (pivot row {pivot_row})")


# ---------------------------------------------------------------- quadrature

@dataclass(frozen=True)
class Quadrature:
    """Points in barycentric coordinates and weights summing to the reference measure."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __post_init__(self):
        self.points.flags.writeable = False
        self.weights.flags.writeable = False


def _triangle_rule():
    a1, w1 = 0.445948490915964886318329253883, 0.223381589678011465944640875907
    a2, w2 = 0.091576213509770743459571463402, 0.109951743655321867388692457427
    pts, wts = [], []
    for a, w in ((a1, w1), (a2, w2)):
        b = 1.0 - 2.0 * a
        pts += [(b, a, a), (a, b, a), (a, a, b)]
        wts += [w / 2.0] * 3
    return Quadrature(np.array(pts), np.array(wts), 4)


def _segment_rule():
    s = np.sqrt(3.0 / 5.0) / 2.0
    x = np.array([0.5 - s, 0.5, 0.5 + s])
    return Quadrature(np.column_stack([1.0 - x, x]), np.array([5.0, 8.0, 5.0]) / 18.0, 5)


TRIANGLE_QUADRATURE = _triangle_rule()
SEGMENT_QUADRATURE = _segment_rule()


# ---------------------------------------------------------------- dof map

FIELD_ORDER = ("ux", "uy", "p", "Pl", "eta", "eta_dot", "lam")
_ALIASES = {"u": ("ux", "uy"), "solid": ("eta", "eta_dot"), "contact": ("lam",)}


def wall_vertices(mesh: Mesh, tag=TAG_ELASTIC):
    """Vertices of the elastic wall ordered by x."""
    v = mesh.vertices_with_tag(tag)
    return v[np.lexsort((mesh.vertices[v, 1], mesh.vertices[v, 0]))]


@dataclass(frozen=True, eq=False)
class DofMap:
    """Contiguous block numbering of the selected fields.

    ``lookup[f]`` maps mesh vertex id -> global dof of field ``f`` (-1 when
    absent).  Fluid fields live on triangle vertices, ``Pl`` on trace
    vertices, solid and contact fields on wall vertices.  ``nodes[f]`` lists
    the mesh vertices of each field in dof order (trace order for ``Pl``).
    """

    fields: tuple
    offsets: dict
    counts: dict
    nodes: dict
    lookup: dict
    n_dofs: int

    def slice(self, f):
        return slice(self.offsets[f], self.offsets[f] + self.counts[f])

    def dofs(self, f):
        return np.arange(self.offsets[f], self.offsets[f] + self.counts[f])

    def has(self, f):
        return f in self.counts

    def split(self, x):
        return {f: np.asarray(x[self.slice(f)]) for f in self.fields}

    def join(self, parts):
        x = np.zeros(self.n_dofs)
        for f, v in parts.items():
            if f in self.counts:
                x[self.slice(f)] = v
        return x


def build_dof_map(mesh: Mesh, trace: TraceMesh | None = None, fields=("u", "p", "Pl"),
                  wall_tag=TAG_ELASTIC) -> DofMap:
    sel = []
    for f in fields:
        sel.extend(_ALIASES.get(f, (f,)))
    unknown = set(sel) - set(FIELD_ORDER)
    if unknown:
        raise ConfigurationError(f"unknown field(s) {sorted(unknown)}")
    sel = [f for f in FIELD_ORDER if f in sel]
    nv = mesh.n_vertices
    fluid = mesh.fluid_vertices()
    nodes = {}
    for f in sel:
        if f in ("ux", "uy", "p"):
            nodes[f] = fluid
        elif f == "Pl":
            if trace is None:
                raise ConfigurationError("porous pressure selected but no trace given")
            if np.any(trace.vertex_ids < 0):
                raise ConfigurationError("trace is not attached to the mesh")
            nodes[f] = np.asarray(trace.vertex_ids)
        else:
            w = wall_vertices(mesh, wall_tag)
            if len(w) == 0:
                raise ConfigurationError(f"field {f!r} needs boundary edges tagged {wall_tag}")
            nodes[f] = w
    offsets, counts, lookup, n = {}, {}, {}, 0
    for f in sel:
        offsets[f], counts[f] = n, len(nodes[f])
        lk = -np.ones(nv, np.int64)
        lk[nodes[f]] = n + np.arange(len(nodes[f]))
        lk.flags.writeable = False
        lookup[f] = lk
        n += len(nodes[f])
    return DofMap(tuple(sel), offsets, counts, nodes, lookup, n)


# ---------------------------------------------------------------- sparse storage

class CooBuilder:
    """Accumulates (row, col, value) blocks; converted once to CSR."""

    def __init__(self, n):
        self.n = n
        self._r, self._c, self._v = [], [], []

    def add(self, rows, cols, vals):
        rows, cols = np.asarray(rows), np.asarray(cols)
        vals = np.broadcast_to(np.asarray(vals, float), np.broadcast_shapes(rows.shape, cols.shape))
        rows, cols = np.broadcast_arrays(rows, cols)
        keep = (rows >= 0) & (cols >= 0)
        self._r.append(rows[keep])
        self._c.append(cols[keep])
        self._v.append(vals[keep])

    def add_local(self, rows, cols, local):
        """Scatter element matrices ``local[e, i, j]`` at ``rows[e, i]``, ``cols[e, j]``."""
        rows, cols = np.asarray(rows), np.asarray(cols)
        self.add(rows[:, :, None], cols[:, None, :], local)

    def extend(self, other):
        self._r += other._r
        self._c += other._c
        self._v += other._v

    def tocsr(self):
        if not self._r:
            return sp.csr_matrix((self.n, self.n))
        r, c, v = (np.concatenate(a) for a in (self._r, self._c, self._v))
        A = sp.coo_matrix((v, (r, c)), shape=(self.n, self.n)).tocsr()
        A.sum_duplicates()
        A.sort_indices()
        return A


@dataclass(eq=False)
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray

    def residual(self, x):
        return self.matrix @ x - self.rhs

    def pattern_symmetric(self):
        P = (self.matrix != 0).astype(np.int8)
        return (P != P.T).nnz == 0

    def apply_dirichlet(self, dofs, values=0.0):
        """Replace rows ``dofs`` by identity rows with prescribed values."""
        dofs = np.asarray(dofs, np.int64)
        keep = np.ones(self.matrix.shape[0])
        keep[dofs] = 0.0
        ident = np.zeros(self.matrix.shape[0])
        ident[dofs] = 1.0
        A = (sp.diags(keep) @ self.matrix + sp.diags(ident)).tocsr()
        A.eliminate_zeros()
        A.sort_indices()
        b = self.rhs * keep
        b[dofs] = values
        return SparseSystem(A, b)


def solve_linear(system: SparseSystem, pivot_tol=1e-14, rtol=1e-10):
    """Direct sparse LU solve; raises :class:`SingularMatrixError` on (near) singularity."""
    A = sp.csc_matrix(system.matrix)
    b = np.asarray(system.rhs, float)
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix is not square")
    row_norm = np.asarray(abs(A).max(axis=1).todense()).ravel()
    if np.any(row_norm == 0):
        raise SingularMatrixError("matrix has an all-zero row", int(np.flatnonzero(row_norm == 0)[0]))
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularMatrixError(f"LU factorisation failed: {exc}", _dense_pivot_row(A)) from None
    d = np.abs(lu.U.diagonal())
    small = np.flatnonzero(d <= pivot_tol * d.max())
    if len(small):
        # U's k-th column is original column perm_c[k]; report the matching row of Pr A
        raise SingularMatrixError("matrix is singular to working precision",
                                  int(np.argsort(lu.perm_r)[small[0]]))
    x = lu.solve(b)
    tol = rtol * (1.0 + np.linalg.norm(b))
    for _ in range(3):
        r = b - A @ x
        if np.linalg.norm(r) <= tol or not np.all(np.isfinite(x)):
            break
        x = x + lu.solve(r)
    res = np.linalg.norm(A @ x - b)
    if not np.all(np.isfinite(x)) or res > tol:
        raise SingularMatrixError(f"solve inaccurate (residual {res:.3e}); matrix ill-conditioned",
                                  _dense_pivot_row(A))
    return x


def _dense_pivot_row(A, limit=4000):
    if A.shape[0] > limit:
        return None
    import scipy.linalg as sla
    P, _, U = sla.lu(A.toarray())
    d = np.abs(np.diag(U))
    k = int(np.argmin(d))
    return int(np.argmax(P[:, k]))


# ---------------------------------------------------------------- element kernels

def p1_geometry(coords, triangles):
    """Areas (m,) and barycentric gradients (m, 3, 2)."""
    p = coords[triangles]
    x, y = p[..., 0], p[..., 1]
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    grads = np.stack([gx, gy], axis=2) / (2.0 * area)[:, None, None]
    return area, grads


def mass_kernel(area, coeff=1.0):
    q = TRIANGLE_QUADRATURE
    local = np.einsum("q,qi,qj->ij", q.weights, q.points, q.points) * 2.0
    return np.asarray(coeff * area)[:, None, None] * local


def stiffness_kernel(area, grads, coeff=1.0):
    return (coeff * area)[:, None, None] * np.einsum("eid,ejd->eij", grads, grads)


def viscous_kernel(area, grads, mu):
    """Local matrix of mu (grad u + grad u^T) : grad v in order (ux0..2, uy0..2)."""
    gg = np.einsum("eid,ejd->eij", grads, grads)
    K = np.zeros((len(area), 6, 6))
    for a in range(2):
        for c in range(2):
            blk = np.einsum("ej,ei->eij", grads[:, :, a], grads[:, :, c])
            if a == c:
                blk = blk + gg
            K[:, 3 * a:3 * a + 3, 3 * c:3 * c + 3] = mu * area[:, None, None] * blk
    return K


def divergence_kernel(area, grads):
    """Local matrix of (q, div u): rows q0..2, columns (ux0..2, uy0..2)."""
    B = np.concatenate([grads[:, None, :, 0], grads[:, None, :, 1]], axis=2)
    return (area / 3.0)[:, None, None] * np.repeat(B, 3, axis=1)


def convection_kernel(area, grads, w_nodal):
    """Local matrix of ((w . grad) u, v) for nodal velocity ``w_nodal`` (m, 3, 2)."""
    q = TRIANGLE_QUADRATURE
    wq = np.einsum("qk,ekd->eqd", q.points, w_nodal)
    adv = np.einsum("eqd,ejd->eqj", wq, grads)
    return 2.0 * area[:, None, None] * np.einsum("q,qi,eqj->eij", q.weights, q.points, adv)


def min_altitudes(coords, triangles):
    p = coords[triangles]
    e = np.linalg.norm(np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], 1), axis=2)
    area = np.abs(p1_geometry(coords, triangles)[0])
    return 2.0 * area / e.max(axis=1)


# ---------------------------------------------------------------- block assembly

def fluid_dof_arrays(dofmap, triangles):
    ux, uy, p = (dofmap.lookup[f][triangles] for f in ("ux", "uy", "p"))
    return np.concatenate([ux, uy], axis=1), p


def assemble_stokes_block(mesh, dofmap, params, dt=None, state_prev=None, *, coords=None,
                          mesh_velocity=None, h_stab=None, builder=None):
    """Bulk Stokes contributions.

    Adds (rho/dt)(u, v) (skipped for ``dt=None``), mu (grad u + grad u^T, grad v),
    -(p, div v), +(q, div u) and the pressure stabilisation
    sum_K delta h_K^2/mu (grad p, grad q)_K.  ``mesh_velocity`` (n_vertices, 2)
    adds the ALE term -rho ((w . grad) u, v).  ``state_prev`` is the previous
    global dof vector; it feeds the mass term of the right-hand side.
    Returns ``(builder, rhs)``.
    """
    X = mesh.vertices if coords is None else coords
    tris = mesh.triangles
    area, grads = p1_geometry(X, tris)
    udofs, pdofs = fluid_dof_arrays(dofmap, tris)
    B = builder if builder is not None else CooBuilder(dofmap.n_dofs)
    rhs = np.zeros(dofmap.n_dofs)

    B.add_local(udofs, udofs, viscous_kernel(area, grads, params.mu))
    D = divergence_kernel(area, grads)
    B.add_local(pdofs, udofs, D)
    B.add_local(udofs, pdofs, -np.transpose(D, (0, 2, 1)))
    hK = mesh.h if h_stab is None else h_stab
    if params.delta_stab > 0:
        B.add_local(pdofs, pdofs, stiffness_kernel(area, grads, params.delta_stab * hK ** 2 / params.mu))

    if dt is not None:
        if dt <= 0:
            raise ValueError("dt must be positive")
        M = mass_kernel(area, params.rho_f / dt)
        for comp in range(2):
            d = udofs[:, 3 * comp:3 * comp + 3]
            B.add_local(d, d, M)
            if state_prev is not None:
                np.add.at(rhs, d, np.einsum("eij,ej->ei", M, state_prev[d]))
    if mesh_velocity is not None:
        C = convection_kernel(area, grads, mesh_velocity[tris])
        for comp in range(2):
            d = udofs[:, 3 * comp:3 * comp + 3]
            B.add_local(d, d, -params.rho_f * C)
    return B, rhs


def edge_load(coords, edges, traction, dofmap, t=0.0):
    """Right-hand side of (traction, v) over ``edges`` with the 3-point Gauss rule.

    ``traction(points, normals, t)`` returns (n, 2) values; normals are the
    outward normals of the triangle owning each edge.
    """
    rhs = np.zeros(dofmap.n_dofs)
    if len(edges) == 0:
        return rhs
    q = SEGMENT_QUADRATURE
    a, b = coords[edges[:, 0]], coords[edges[:, 1]]
    L = np.linalg.norm(b - a, axis=1)
    tang = (b - a) / L[:, None]
    normals = np.column_stack([tang[:, 1], -tang[:, 0]])
    for k in range(len(q.weights)):
        pts = q.points[k, 0] * a + q.points[k, 1] * b
        tr = np.asarray(traction(pts, normals, t), float).reshape(-1, 2)
        for comp, f in enumerate(("ux", "uy")):
            for loc in range(2):
                d = dofmap.lookup[f][edges[:, loc]]
                np.add.at(rhs, d, q.weights[k] * q.points[k, loc] * L * tr[:, comp])
    return rhs


def outward_edges(mesh, edge_ids, coords=None):
    """Boundary edges oriented so the domain lies to their left (outward normal = (t_y, -t_x))."""
    X = mesh.vertices if coords is None else coords
    from .mesh import edge_triangle_map
    e2t = edge_triangle_map(mesh.triangles)
    out = []
    for e in np.asarray(edge_ids).tolist():
        a, b = mesh.boundary_edges[e].tolist()
        ts = e2t.get((a, b) if a < b else (b, a), [])
        if not ts:
            continue
        tri = mesh.triangles[ts[0]].tolist()
        i = tri.index(a)
        # counter-clockwise triangle: edge (a, next) leaves the interior on its left
        out.append((a, b) if tri[(i + 1) % 3] == b else (b, a))
    return np.array(out, np.int64).reshape(-1, 2)


def assemble_surface_darcy(trace: TraceMesh, dofmap, eps_k_tau, builder=None):
    """1D stiffness of (eps K_tau d_s P, d_s q) along the trace."""
    if eps_k_tau < 0:
        raise ValueError("eps * k_tau must be non-negative")
    B = builder if builder is not None else CooBuilder(dofmap.n_dofs)
    L = trace.lengths
    d = dofmap.dofs("Pl")[trace.segments]
    local = (eps_k_tau / L)[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])
    B.add_local(d, d, local)
    return B


def trace_mass(trace: TraceMesh, lumped=False):
    """Per-segment 2x2 mass matrices; lumped means the trapezoidal rule."""
    L = trace.lengths
    if lumped:
        return L[:, None, None] * np.array([[0.5, 0.0], [0.0, 0.5]])
    q = SEGMENT_QUADRATURE
    return L[:, None, None] * np.einsum("q,qi,qj->ij", q.weights, q.points, q.points)


def assemble_interface_coupling(trace: TraceMesh, dofmap, params, builder=None,
                                segment_mask=None, lumped=False, vertex_mask=None):
    """Fluid / porous-layer coupling on fluid-covered trace segments.

    Adds (P_l, v.n) + (eps/(4 K_n)) (u.n, v.n) to the momentum rows and
    -(u.n, q_l) to the porous rows.  Sealed segments contribute nothing.
    With ``lumped`` quadrature, ``vertex_mask`` switches single trace
    vertices off (their quadrature weight is dropped).
    """
    if params.k_n <= 0:
        raise ValueError("k_n must be positive")
    B = builder if builder is not None else CooBuilder(dofmap.n_dofs)
    mask = trace.fluid_segments.copy()
    if segment_mask is not None:
        mask &= segment_mask
    segs = np.flatnonzero(mask)
    if len(segs) == 0:
        return B
    M = trace_mass(trace, lumped)[segs]
    if vertex_mask is not None:
        if not lumped:
            raise ValueError("vertex masks need the lumped rule")
        M = M * np.asarray(vertex_mask, float)[trace.segments[segs]][:, :, None]
    n = trace.normals[segs]
    verts = trace.vertex_ids[trace.segments[segs]]
    pl = dofmap.dofs("Pl")[trace.segments[segs]]
    pen = -getattr(params, "sigma_p_sign", -1.0) * params.epsilon / (4.0 * params.k_n)
    for a, fa in enumerate(("ux", "uy")):
        ua = dofmap.lookup[fa][verts]
        C = M * n[:, a][:, None, None]
        B.add_local(ua, pl, C)
        B.add_local(pl, ua, -np.transpose(C, (0, 2, 1)))
        for c, fc in enumerate(("ux", "uy")):
            uc = dofmap.lookup[fc][verts]
            B.add_local(ua, uc, pen * M * (n[:, a] * n[:, c])[:, None, None])
    return B
