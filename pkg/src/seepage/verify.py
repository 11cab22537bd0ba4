"""Convergence studies against closed-form solutions.

The exact solutions and derived quantities here are written out by hand and
do not reuse any formula from the solver modules; only the discrete solves
go through them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .mesh import TAG_INLET, TAG_LAYER, TAG_OUTLET, TAG_WALL, TraceMesh, extract_trace, generate_channel_mesh
from .stokes_darcy import LoadSchedule, PhysParams, StokesDarcyProblem, compute_interface_flux


@dataclass
class ConvergenceTable:
    """Rows of (h, L2 error, H1 error) with observed rates."""

    name: str
    h: list = field(default_factory=list)
    error_l2: list = field(default_factory=list)
    error_h1: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def add(self, h, e_l2, e_h1=float("nan")):
        if self.h and not h < self.h[-1]:
            raise ValueError("mesh sizes must be strictly decreasing")
        self.h.append(float(h))
        self.error_l2.append(float(e_l2))
        self.error_h1.append(float(e_h1))

    @staticmethod
    def _rates(h, e):
        out = [float("nan")]
        for i in range(len(h) - 1):
            if e[i] == 0.0 or e[i + 1] == 0.0:
                out.append(float("nan"))
            else:
                out.append(math.log(e[i] / e[i + 1]) / math.log(h[i] / h[i + 1]))
        return out

    @property
    def rates(self):
        return self._rates(self.h, self.error_l2)

    @property
    def rates_h1(self):
        return self._rates(self.h, self.error_h1)

    @property
    def final_rate(self):
        return self.rates[-1]

    def format(self):
        lines = [self.name, f"{'h':>12} {'L2 error':>12} {'rate':>6} {'H1 error':>12} {'rate':>6}"]
        for h, e, r, e1, r1 in zip(self.h, self.error_l2, self.rates, self.error_h1, self.rates_h1):
            lines.append(f"{h:12.4e} {e:12.4e} {r:6.2f} {e1:12.4e} {r1:6.2f}")
        for k, v in self.extra.items():
            lines.append(f"  {k} = {v}")
        return "\n".join(lines)

    def to_csv(self):
        rows = ["h,error_l2,rate_l2,error_h1,rate_h1"]
        for h, e, r, e1, r1 in zip(self.h, self.error_l2, self.rates, self.error_h1, self.rates_h1):
            rows.append(",".join(f"{v:.17g}" for v in (h, e, r, e1, r1)))
        return "\n".join(rows) + "\n"


# ---------------------------------------------------------------- surface Darcy

def _gauss_1d():
    # 3-point Gauss on (0, 1), written out independently of fem
    a = math.sqrt(3.0 / 5.0)
    return np.array([0.5 - a / 2, 0.5, 0.5 + a / 2]), np.array([5 / 18, 8 / 18, 5 / 18])


def solve_surface_darcy(n, eps_k_tau, source):
    """P1 solve of -(eps_k_tau P')' = f on (0, 1) with sealed ends and zero mean.

    Returns node coordinates and nodal values.
    """
    x = np.linspace(0.0, 1.0, n + 1)
    trace = TraceMesh.from_points(x)
    nv = n + 1
    dm = fem.DofMap(("Pl",), {"Pl": 0}, {"Pl": nv}, {"Pl": np.arange(nv)}, {}, nv)
    A = fem.assemble_surface_darcy(trace, dm, eps_k_tau).tocsr()
    xi, w = _gauss_1d()
    b = np.zeros(nv)
    mean = np.zeros(nv)
    hseg = np.diff(x)
    for q, wq in zip(xi, w):
        pts = x[:-1] + q * hseg
        f = source(pts)
        np.add.at(b, np.arange(n), wq * hseg * (1 - q) * f)
        np.add.at(b, np.arange(1, nv), wq * hseg * q * f)
    mean[:-1] += hseg / 2
    mean[1:] += hseg / 2
    # Lagrange multiplier for the zero-mean constraint
    K = sp.bmat([[A, sp.csr_matrix(mean[:, None])], [sp.csr_matrix(mean[None, :]), None]], format="csr")
    sol = fem.solve_linear(fem.SparseSystem(K, np.append(b, 0.0)))
    return x, sol[:nv]


def _errors_1d(x, P, exact, dexact):
    xi, w = _gauss_1d()
    hseg = np.diff(x)
    e0 = e1 = 0.0
    slope = np.diff(P) / hseg
    for q, wq in zip(xi, w):
        pts = x[:-1] + q * hseg
        ph = (1 - q) * P[:-1] + q * P[1:]
        e0 += np.sum(wq * hseg * (ph - exact(pts)) ** 2)
        e1 += np.sum(wq * hseg * (slope - dexact(pts)) ** 2)
    return math.sqrt(e0), math.sqrt(e1)


def mms_surface_darcy(levels=4, eps_k_tau=0.01, n0=8, mode="cosine"):
    """Manufactured P(x) = cos(2 pi x) for the surface Darcy operator (``mode="constant"`` uses P = 1)."""
    if levels < 3:
        raise ValueError("need at least 3 levels")
    k = 2.0 * math.pi
    if mode == "cosine":
        exact = lambda s: np.cos(k * s)
        dexact = lambda s: -k * np.sin(k * s)
        source = lambda s: eps_k_tau * k * k * np.cos(k * s)
    elif mode == "constant":
        # zero-mean normalisation removes the constant, so the oracle is 0
        exact = lambda s: np.zeros_like(s)
        dexact = lambda s: np.zeros_like(s)
        source = lambda s: np.zeros_like(s)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    table = ConvergenceTable(f"surface Darcy MMS ({mode})")
    for lev in range(levels):
        n = n0 * 2 ** lev
        x, P = solve_surface_darcy(n, eps_k_tau, source)
        table.add(1.0 / n, *_errors_1d(x, P, exact, dexact))
    return table


# ---------------------------------------------------------------- channel flows

def _channel_errors(mesh, u, exact):
    """L2 and H1-seminorm errors of a P1 velocity against ``exact(pts) -> (u, grad u)``."""
    X, tris = mesh.vertices, mesh.triangles
    v = X[tris]
    area = 0.5 * ((v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1])
                  - (v[:, 2, 0] - v[:, 0, 0]) * (v[:, 1, 1] - v[:, 0, 1]))
    # P1 gradients from the inverse Jacobian
    J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
    Jinv = np.linalg.inv(J)
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    grads = np.einsum("kr,erd->ekd", ref, Jinv)
    ue = u[tris]                                   # (m, 3, 2)
    gu = np.einsum("ekc,ekd->ecd", ue, grads)      # (m, comp, dir)
    # degree-5 Strang-Fix / Dunavant 7-point rule
    a1, b1 = 0.059715871789770, 0.470142064105115
    a2, b2 = 0.797426985353087, 0.101286507323456
    bary = np.array([[1 / 3, 1 / 3, 1 / 3],
                     [a1, b1, b1], [b1, a1, b1], [b1, b1, a1],
                     [a2, b2, b2], [b2, a2, b2], [b2, b2, a2]])
    wts = np.array([0.225, *[0.132394152788506] * 3, *[0.125939180544827] * 3])
    e0 = e1 = 0.0
    for lam, wq in zip(bary, wts):
        pts = np.einsum("k,ekd->ed", lam, v)
        uh = np.einsum("k,ekc->ec", lam, ue)
        ux, gx = exact(pts)
        e0 += np.sum(wq * area * np.sum((uh - ux) ** 2, axis=1))
        e1 += np.sum(wq * area * np.sum((gu - gx) ** 2, axis=(1, 2)))
    return math.sqrt(e0), math.sqrt(e1)


def _traction(stress):
    def traction(pts, normals, t):
        S = stress(pts)
        return np.einsum("eij,ej->ei", S, normals)
    return traction


def _nodal_flux(mesh, u, x_value):
    """Flux through the vertical line x = x_value by the trapezoidal rule on mesh nodes."""
    sel = np.flatnonzero(np.abs(mesh.vertices[:, 0] - x_value) < 1e-12)
    y = mesh.vertices[sel, 1]
    order = np.argsort(y)
    return float(np.trapezoid(u[sel[order], 0], y[order]))


def poiseuille_check(levels=3, mu=0.03, G=1.0, length=4.0, height=1.0, ny0=4, delta_stab=0.1):
    """No-slip channel driven by a pressure drop G per unit length.

    Exact: u = G (H - y) y / (2 mu), p = G (L - x).  End tractions are the
    exact stress times the normal.
    """
    if levels < 2:
        raise ValueError("need at least 2 levels")
    H, L = height, length

    def exact(pts):
        y = pts[:, 1]
        u = np.zeros((len(y), 2))
        u[:, 0] = G * (H - y) * y / (2 * mu)
        g = np.zeros((len(y), 2, 2))
        g[:, 0, 1] = G * (H - 2 * y) / (2 * mu)
        return u, g

    def stress(pts):
        x, y = pts[:, 0], pts[:, 1]
        S = np.zeros((len(x), 2, 2))
        shear = G * (H - 2 * y) / 2
        S[:, 0, 0] = S[:, 1, 1] = -G * (L - x)
        S[:, 0, 1] = S[:, 1, 0] = shear
        return S

    params = PhysParams(mu=mu, delta_stab=delta_stab, pbar=LoadSchedule.constant(0.0))
    table = ConvergenceTable("Poiseuille channel")
    tr = _traction(stress)
    for lev in range(levels):
        ny = ny0 * 2 ** lev
        nx = int(round(ny * L / H))
        mesh = generate_channel_mesh(L, H, nx, ny)
        prob = StokesDarcyProblem(mesh, None, params, neumann={TAG_INLET: tr, TAG_OUTLET: tr},
                                  noslip_tags=(TAG_LAYER, 5))
        st = prob.steady()
        table.add(H / ny, *_channel_errors(mesh, st.u, exact))
        if ny == 8:
            mid = np.flatnonzero((np.abs(mesh.vertices[:, 0] - L / 2) < 1e-12)
                                 & (np.abs(mesh.vertices[:, 1] - H / 2) < 1e-12))
            table.extra["centerline_32x8"] = float(st.u[mid[0], 0])
        table.extra["flux"] = _nodal_flux(mesh, st.u, L / 2)
    table.extra["centerline_exact"] = G * H * H / (8 * mu)
    table.extra["flux_exact"] = G * H ** 3 / (12 * mu)
    return table


def slip_channel_check(levels=2, mu=0.03, G=1.0, length=4.0, height=1.0, ny0=8, k_n=1e-8):
    """Channel over a sealed, almost impermeable layer: free slip at the bottom.

    Exact: u = G (H^2 - y^2) / (2 mu), p = G (L - x).
    """
    H, L = height, length

    def exact(pts):
        y = pts[:, 1]
        u = np.zeros((len(y), 2))
        u[:, 0] = G * (H * H - y * y) / (2 * mu)
        g = np.zeros((len(y), 2, 2))
        g[:, 0, 1] = -G * y / mu
        return u, g

    def stress(pts):
        x, y = pts[:, 0], pts[:, 1]
        S = np.zeros((len(x), 2, 2))
        S[:, 0, 0] = S[:, 1, 1] = -G * (L - x)
        S[:, 0, 1] = S[:, 1, 0] = -G * y
        return S

    params = PhysParams(mu=mu, k_n=k_n, k_tau=0.0, pbar=LoadSchedule.constant(0.0))
    table = ConvergenceTable("slip channel")
    tr = _traction(stress)
    for lev in range(levels):
        ny = ny0 * 2 ** lev
        nx = int(round(ny * L / H))
        mesh = generate_channel_mesh(L, H, nx, ny, tag_scheme={"top": TAG_WALL})
        trace = extract_trace(mesh)
        neumann = {TAG_INLET: tr, TAG_OUTLET: tr}
        prob = StokesDarcyProblem(mesh, trace, params, neumann=neumann, noslip_tags=(TAG_WALL,))
        st = prob.steady()
        table.add(H / ny, *_channel_errors(mesh, st.u, exact))
        bottom = trace.vertex_ids
        u_b = st.u[bottom]
        table.extra["slip_velocity"] = float(u_b[len(bottom) // 2, 0])
        # |u.n| over the layer, nodal rule on the trace
        w = np.zeros(trace.n_vertices)
        w[:-1] += trace.lengths / 2
        w[1:] += trace.lengths / 2
        table.extra["normal_flux_abs"] = float(np.sum(w * np.abs(u_b[:, 1])))
        table.extra["net_normal_flux"] = compute_interface_flux(st, trace, None, prob.dofmap)
        # tangential traction on the layer from the Stokes-only residual
        bare = StokesDarcyProblem(mesh, None, params, neumann=neumann, noslip_tags=(TAG_WALL,))
        x_bare = st.to_vector(prob.dofmap)[: bare.dofmap.n_dofs]
        r = bare.assemble().residual(x_bare)
        table.extra["tangential_traction"] = float(abs(np.sum(r[bare.dofmap.lookup["ux"][bottom]])))
    table.extra["slip_exact"] = G * H * H / (2 * mu)
    table.extra["channel_flux_exact"] = G * H ** 3 / (3 * mu)
    table.extra["traction_scale"] = G * H * L
    return table


def run_suite(name="all"):
    """Run one or all suites; returns ``(tables, passed)``."""
    suites = {
        "mms": lambda: (mms_surface_darcy(4), lambda t: t.final_rate >= 1.9),
        "poiseuille": lambda: (poiseuille_check(3), lambda t: t.final_rate >= 1.8 and
                               abs(t.extra["centerline_32x8"] / t.extra["centerline_exact"] - 1) <= 0.02),
        "slip": lambda: (slip_channel_check(2), lambda t: abs(t.extra["slip_velocity"] / t.extra["slip_exact"] - 1)
                         <= 0.02 and t.extra["normal_flux_abs"] <= 1e-6 * t.extra["channel_flux_exact"]),
    }
    names = list(suites) if name == "all" else [name]
    tables, ok = [], True
    for n in names:
        if n not in suites:
            raise ValueError(f"unknown suite {n!r}")
        table, check = suites[n]()
        tables.append(table)
        ok = ok and bool(check(table))
    return tables, ok
