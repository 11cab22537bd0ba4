"""Bulk Stokes flow coupled to an averaged Darcy pressure on a boundary trace.

Unknowns are the fluid velocity and pressure and the porous pressure ``P_l``
on the layer.  The layer carries a tangential Laplacian fed by the normal
fluid velocity, and pushes back on the fluid through the Robin-type normal
stress ``-P_l - eps/(4 K_n) u.n``.  Tangential stress on the layer is left
free (natural condition).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import fem
from .mesh import TAG_ELASTIC, TAG_INLET, TAG_LAYER, TAG_OUTLET, TAG_WALL, Mesh, TraceMesh


@dataclass(frozen=True)
class LoadSchedule:
    """Piecewise-constant load: ``values[i]`` on ``[times[i], times[i+1])``; zero before ``times[0]``."""

    times: tuple = (0.0,)
    values: tuple = (0.0,)

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.times) != len(self.values) or not self.times:
            raise ValueError("load schedule needs matching, non-empty times and values")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("load breakpoint times must be strictly increasing")

    @classmethod
    def constant(cls, value):
        return cls((0.0,), (value,))

    def __call__(self, t):
        k = np.searchsorted(self.times, t, side="right") - 1
        return 0.0 if k < 0 else self.values[k]

    def scaled(self, factor):
        return LoadSchedule(self.times, tuple(factor * v for v in self.values))


@dataclass(frozen=True)
class PhysParams:
    mu: float = 0.03
    rho_f: float = 1.0
    epsilon: float = 0.01
    k_tau: float = 1.0
    k_n: float = 1.0
    pbar: LoadSchedule = field(default_factory=lambda: LoadSchedule.constant(1.0))
    delta_stab: float = 0.1
    # wall and contact (channel-contact model only)
    rho_s: float = 1.0
    c1: float = 1.0
    c0: float = 0.0
    gamma_fsi: float | None = None
    gamma_c: float | None = None
    g_min: float = 1e-3
    # -1: sigma_p = -P_l - eps/(4 K_n) v_n (dissipative); +1 flips the velocity term
    sigma_p_sign: float = -1.0

    def __post_init__(self):
        if not isinstance(self.pbar, LoadSchedule):
            object.__setattr__(self, "pbar", LoadSchedule.constant(self.pbar))
        for name in ("mu", "rho_f", "epsilon", "k_n"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.k_tau < 0:
            raise ValueError("k_tau must be non-negative")
        if self.gamma_c is not None and not self.gamma_c > 0:
            raise ValueError("gamma_c must be positive")
        if self.delta_stab < 0:
            raise ValueError("delta_stab must be non-negative")
        if self.sigma_p_sign not in (-1.0, 1.0):
            raise ValueError("sigma_p_sign must be -1 or +1")

    @property
    def eps_k_tau(self):
        return self.epsilon * self.k_tau

    @property
    def penalty(self):
        """Normal resistance eps / (4 K_n) of the layer."""
        return self.epsilon / (4.0 * self.k_n)

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class CoupledState:
    time: float
    u: np.ndarray            # (n_fluid, 2) nodal velocity in fluid-dof order
    p: np.ndarray
    P_l: np.ndarray
    eta: np.ndarray | None = None
    eta_dot: np.ndarray | None = None
    lam: np.ndarray | None = None

    def __post_init__(self):
        for name in ("u", "p", "P_l", "eta", "eta_dot", "lam"):
            v = getattr(self, name)
            if v is not None:
                v = np.array(v, float)
                v.flags.writeable = False
                object.__setattr__(self, name, v)

    @classmethod
    def zeros(cls, dofmap, time=0.0):
        c = dofmap.counts
        z = (lambda f: np.zeros(c[f]) if f in c else None)
        return cls(time, np.zeros((c["ux"], 2)), np.zeros(c["p"]),
                   np.zeros(c.get("Pl", 0)), z("eta"), z("eta_dot"), z("lam"))

    @classmethod
    def from_vector(cls, dofmap, x, time):
        s = dofmap.split(x)
        return cls(time, np.column_stack([s["ux"], s["uy"]]), s["p"], s.get("Pl", np.zeros(0)),
                   s.get("eta"), s.get("eta_dot"), s.get("lam"))

    def to_vector(self, dofmap):
        parts = {"ux": self.u[:, 0], "uy": self.u[:, 1], "p": self.p, "Pl": self.P_l}
        for f, v in (("eta", self.eta), ("eta_dot", self.eta_dot), ("lam", self.lam)):
            if v is not None:
                parts[f] = v
        return dofmap.join(parts)

    def check(self, dofmap):
        if self.u.shape != (dofmap.counts["ux"], 2) or len(self.p) != dofmap.counts["p"]:
            raise ValueError("state does not match the dof map")
        if len(self.P_l) != dofmap.counts.get("Pl", 0):
            raise ValueError("porous pressure does not match the dof map")
        if self.time < 0:
            raise ValueError("state time must be non-negative")


def pressure_traction(schedule):
    """Neumann datum sigma n = -P(t) n."""
    sched = schedule if callable(schedule) else LoadSchedule.constant(schedule)
    return lambda pts, normals, t: -sched(t) * normals


class StokesDarcyProblem:
    """Discrete coupled problem on a fixed mesh.

    ``neumann`` maps boundary tag -> traction callable ``f(points, normals, t)``;
    by default the inlet tag carries ``-pbar(t) n`` and the outlet is traction
    free.  Velocity vanishes on ``noslip_tags``.  ``pl_dirichlet`` may fix the
    porous pressure at the trace ends (``{"start": value, "end": value}``),
    otherwise the ends are sealed.
    """

    def __init__(self, mesh: Mesh, trace: TraceMesh | None, params: PhysParams, dofmap=None,
                 neumann=None, noslip_tags=(TAG_WALL, TAG_ELASTIC), pl_dirichlet=None,
                 body_force=None):
        self.mesh, self.trace, self.params = mesh, trace, params
        self.dofmap = dofmap or fem.build_dof_map(mesh, trace, ("u", "p", "Pl") if trace else ("u", "p"))
        if neumann is None:
            neumann = {TAG_INLET: pressure_traction(params.pbar), TAG_OUTLET: pressure_traction(0.0)}
        self.neumann = neumann
        self.noslip_tags = tuple(noslip_tags)
        self.pl_dirichlet = dict(pl_dirichlet or {})
        self.body_force = body_force
        self._edges = {tag: fem.outward_edges(mesh, mesh.edges_with_tag(tag)) for tag in neumann}
        dm = self.dofmap
        walls = np.unique(np.concatenate([mesh.vertices_with_tag(t) for t in self.noslip_tags]
                                         + [np.zeros(0, np.int64)]))
        self._noslip_vertices = walls
        self.noslip_dofs = np.concatenate([dm.lookup["ux"][walls], dm.lookup["uy"][walls]])
        self.noslip_dofs = self.noslip_dofs[self.noslip_dofs >= 0]

    # -- assembly
    def assemble(self, dt=None, x_prev=None, t=0.0):
        dm, P = self.dofmap, self.params
        B, rhs = fem.assemble_stokes_block(self.mesh, dm, P, dt, x_prev)
        if self.trace is not None:
            fem.assemble_surface_darcy(self.trace, dm, P.eps_k_tau, builder=B)
            fem.assemble_interface_coupling(self.trace, dm, P, builder=B)
        for tag, traction in self.neumann.items():
            rhs += fem.edge_load(self.mesh.vertices, self._edges[tag], traction, dm, t)
        if self.body_force is not None:
            rhs += self._body_load()
        sys = fem.SparseSystem(B.tocsr(), rhs)
        dofs, vals = [self.noslip_dofs], [np.zeros(len(self.noslip_dofs))]
        pl = dm.dofs("Pl") if dm.has("Pl") else None
        for end, value in self.pl_dirichlet.items():
            dofs.append(np.array([pl[0] if end == "start" else pl[-1]]))
            vals.append(np.array([value]))
        if pl is not None and P.eps_k_tau == 0.0:
            # without tangential flow P_l only enforces u.n weakly; where no free
            # velocity sits (sealed span, no-slip corners) it is arbitrary, so pin it
            walls = np.isin(self.trace.vertex_ids, self._noslip_vertices)
            loose = pl[~self.trace.vertex_has_fluid() | walls]
            dofs.append(loose)
            vals.append(np.zeros(len(loose)))
        return sys.apply_dirichlet(np.concatenate(dofs), np.concatenate(vals))

    def _body_load(self):
        q = fem.TRIANGLE_QUADRATURE
        X, tris, dm = self.mesh.vertices, self.mesh.triangles, self.dofmap
        area = self.mesh.areas()
        rhs = np.zeros(dm.n_dofs)
        for k in range(len(q.weights)):
            pts = np.einsum("i,eid->ed", q.points[k], X[tris])
            f = np.asarray(self.body_force(pts), float)
            for comp, name in enumerate(("ux", "uy")):
                for loc in range(3):
                    np.add.at(rhs, dm.lookup[name][tris[:, loc]],
                              2.0 * area * q.weights[k] * q.points[k, loc] * f[:, comp])
        return rhs

    # -- solves
    def step(self, state: CoupledState, dt):
        if not dt > 0:
            raise ValueError("dt must be positive")
        state.check(self.dofmap)
        t = state.time + dt
        sys = self.assemble(dt, state.to_vector(self.dofmap), t)
        return CoupledState.from_vector(self.dofmap, fem.solve_linear(sys), t)

    def steady(self, t=0.0):
        sys = self.assemble(None, None, t)
        return CoupledState.from_vector(self.dofmap, fem.solve_linear(sys), t)

    def residual(self, state, dt=None, prev=None):
        x_prev = None if prev is None else prev.to_vector(self.dofmap)
        sys = self.assemble(dt, x_prev, state.time)
        return sys.residual(state.to_vector(self.dofmap))

    # -- diagnostics
    def flux(self, state, window=None):
        return compute_interface_flux(state, self.trace, window, self.dofmap)

    def energy_report(self, state):
        return _energy(self, state)


def _trace_velocity(state, trace, dofmap):
    vid = trace.vertex_ids
    idx = dofmap.lookup["ux"][vid] - dofmap.offsets["ux"]
    u = np.zeros((trace.n_vertices, 2))
    has = dofmap.lookup["ux"][vid] >= 0
    u[has] = state.u[idx[has]]
    return u


def compute_interface_flux(state, trace: TraceMesh, window=None, dofmap=None):
    """Signed flux of u.n out of the fluid through the trace over an arc-length window."""
    if dofmap is None:
        raise ValueError("a dof map is required to locate velocity dofs")
    arc = trace.arc
    lo, hi = (arc[0], arc[-1]) if window is None else window
    tol = 1e-12 * max(1.0, arc[-1])
    if lo > hi or lo < arc[0] - tol or hi > arc[-1] + tol:
        raise IndexError(f"window [{lo}, {hi}] outside trace extent [{arc[0]}, {arc[-1]}]")
    u = _trace_velocity(state, trace, dofmap)
    q = fem.SEGMENT_QUADRATURE
    total = 0.0
    for k in np.flatnonzero(trace.fluid_segments):
        a, b = arc[k], arc[k + 1]
        s0, s1 = max(a, lo), min(b, hi)
        if s1 <= s0:
            continue
        un = u[[k, k + 1]] @ trace.normals[k]
        for xi, w in zip(q.points[:, 1], q.weights):
            s = s0 + xi * (s1 - s0)
            lam = (s - a) / (b - a)
            total += w * (s1 - s0) * ((1 - lam) * un[0] + lam * un[1])
    return total


def _energy(problem, state):
    P, dm, mesh = problem.params, problem.dofmap, problem.mesh
    area, grads = fem.p1_geometry(mesh.vertices, mesh.triangles)
    udofs, _ = fem.fluid_dof_arrays(dm, mesh.triangles)
    x = state.to_vector(dm)
    ue = x[udofs]
    M = fem.mass_kernel(area)
    ekin = 0.5 * P.rho_f * sum(np.einsum("ei,eij,ej->", ue[:, 3 * c:3 * c + 3], M, ue[:, 3 * c:3 * c + 3])
                               for c in range(2))
    visc = np.einsum("ei,eij,ej->", ue, fem.viscous_kernel(area, grads, P.mu), ue)
    out = {"kinetic": float(ekin), "viscous": float(max(visc, 0.0)), "interface": 0.0, "darcy": 0.0}
    tr = problem.trace
    if tr is not None:
        Mt = fem.trace_mass(tr)
        u = _trace_velocity(state, tr, dm)
        seg = tr.segments
        un = np.einsum("skd,sd->sk", u[seg], tr.normals)
        un[~tr.fluid_segments] = 0.0
        out["interface"] = float(P.penalty * np.einsum("si,sij,sj->", un, Mt, un))
        dP = np.diff(state.P_l) / tr.lengths
        out["darcy"] = float(P.eps_k_tau * np.sum(dP ** 2 * tr.lengths))
    return out


# module-level entry points mirroring the problem methods

def step(state, dt, params, mesh, trace, dofmap=None, **kw):
    return StokesDarcyProblem(mesh, trace, params, dofmap, **kw).step(state, dt)


def steady_solve(params, mesh, trace, dofmap=None, **kw):
    return StokesDarcyProblem(mesh, trace, params, dofmap, **kw).steady()


def energy_report(state_prev, state_next, dt, params, problem):
    """Energy quantities of ``state_next`` plus the kinetic-energy change over the step."""
    prob = problem if problem.params is params else StokesDarcyProblem(
        problem.mesh, problem.trace, params, problem.dofmap, problem.neumann, problem.noslip_tags)
    rep = _energy(prob, state_next)
    rep["kinetic_change"] = rep["kinetic"] - _energy(prob, state_prev)["kinetic"]
    rep["dt"] = dt
    return rep
