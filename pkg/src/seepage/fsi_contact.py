"""Channel flow under an elastic wall that can touch and leave a porous bottom layer.

The solid is a generalized string: vertical displacement ``eta`` of the top
wall with inertia ``rho_s`` (per unit length), tension ``c1`` and spring
``c0``, clamped at both ends.  The fluid lives on a column-wise ALE map of a
structured channel mesh whose columns follow the wall.  Geometry is taken
from the previous step, so each step is linear except for the contact
complementarity, which is solved by semismooth Newton.

Every wall node ``i`` sits above trace vertex ``i``.  A node is either

* free: the wall couples to the fluid by symmetric Nitsche terms and the
  fluid couples to the layer through ``sigma_p`` with ``u.n``;
* in contact: the wall rests on the layer, feels ``sigma_p`` with the wall
  velocity and the contact pressure ``lam``; the fluid column below it is
  frozen (zero velocity, pressure equal to the layer pressure).

Interface integrals use the nodal (trapezoidal) rule so that every
quadrature point belongs to exactly one regime.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .mesh import edge_triangle_map, extract_trace, generate_channel_mesh
from .stokes_darcy import CoupledState, LoadSchedule, PhysParams


class ConvergenceError(RuntimeError):
    def __init__(self, message, history):
        self.history = list(history)
        super().__init__(f"{message}; residual history {['%.3e' % r for r in self.history]}")


class GeometryError(RuntimeError):
    pass


REGIME_NITSCHE, REGIME_LAYER_FLUID, REGIME_CONTACT = "nitsche", "layer_fluid", "contact"


def sigma_p(P_l, normal_velocity, params, in_contact=False):
    """Normal stress of the porous layer.

    ``normal_velocity`` is ``u_f.n`` over free parts of the layer and the
    wall velocity ``d_dot.n`` where the wall is in contact; the formula is
    the same, only the argument changes.
    """
    if params.k_n <= 0:
        raise ValueError("k_n must be positive")
    del in_contact
    return -np.asarray(P_l) + params.sigma_p_sign * params.penalty * np.asarray(normal_velocity)


@dataclass(frozen=True, eq=False)
class ContactState:
    p_gamma: np.ndarray
    active: np.ndarray
    lam: np.ndarray
    gap: np.ndarray
    penetration: np.ndarray   # d_n - g
    weights: np.ndarray

    @property
    def active_measure(self):
        return float(np.sum(self.weights[self.active]))

    @property
    def complementarity(self):
        return float(np.sum(np.abs(self.lam * self.penetration) * self.weights))


def contact_terms(d_n, lam, gap, gamma_c):
    """Semismooth pieces of ``lam = gamma_c [d_n - g + lam/gamma_c]_+``.

    ``lam`` is the contact pressure (>= 0 when pressing).  Returns the
    indicator ``P_gamma``, the active flags, the residual
    ``lam - gamma_c [P_gamma]_+`` and its generalized derivatives with
    respect to ``d_n`` and ``lam`` (Heaviside of ``P_gamma``).
    """
    if not gamma_c > 0:
        raise ValueError("gamma_c must be positive")
    d_n, lam, gap = (np.asarray(a, float) for a in (d_n, lam, gap))
    p_gamma = d_n - gap + lam / gamma_c
    active = p_gamma > 0
    res = lam - gamma_c * np.maximum(p_gamma, 0.0)
    d_dn = np.where(active, -gamma_c, 0.0)
    d_lam = np.where(active, 0.0, 1.0)
    return p_gamma, active, res, d_dn, d_lam


def solve_obstacle(K, f, gap, weights, gamma_c, max_iter=30, tol=1e-12):
    """Static obstacle problem ``K d + W lam = f``, ``d <= gap`` by semismooth Newton.

    Dense; meant for small verification problems.  ``d`` is the displacement
    towards the obstacle.
    """
    K, f = np.asarray(K, float), np.asarray(f, float)
    n = len(f)
    W = np.diag(weights)
    d, lam = np.zeros(n), np.zeros(n)
    r0, history = None, []
    for _ in range(max_iter):
        _, active, res, d_dn, d_lam = contact_terms(d, lam, gap, gamma_c)
        F = np.concatenate([K @ d - f + W @ lam, res])
        nrm = np.linalg.norm(F)
        r0 = nrm if r0 is None else r0
        history.append(nrm)
        if nrm <= tol * (1 + r0):
            return d, lam, active
        J = np.block([[K, W], [np.diag(d_dn), np.diag(d_lam)]])
        step = np.linalg.solve(J, -F)
        d, lam = d + step[:n], lam + step[n:]
    raise ConvergenceError("obstacle solve did not converge", history)


@dataclass(frozen=True)
class ChannelGeometry:
    length: float = 4.0
    height: float = 1.0
    nx: int = 40
    ny: int = 8


@dataclass(frozen=True, eq=False)
class WallModel:
    """Clamped string on the wall nodes ``x``."""

    x: np.ndarray
    rho_s: float
    c1: float
    c0: float
    clamped: tuple = (0.0, 0.0)

    def matrices(self):
        n = len(self.x)
        L = np.diff(self.x)
        i = np.arange(n - 1)
        rows = np.concatenate([i, i, i + 1, i + 1])
        cols = np.concatenate([i, i + 1, i, i + 1])
        M = sp.csr_matrix((np.concatenate([L / 3, L / 6, L / 6, L / 3]), (rows, cols)), shape=(n, n))
        K = sp.csr_matrix((np.concatenate([1 / L, -1 / L, -1 / L, 1 / L]), (rows, cols)), shape=(n, n))
        return M, K

    def nodal_weights(self):
        L = np.diff(self.x)
        w = np.zeros(len(self.x))
        w[:-1] += L / 2
        w[1:] += L / 2
        return w

    def energy(self, eta, eta_dot):
        M, K = self.matrices()
        return 0.5 * (self.rho_s * eta_dot @ M @ eta_dot + self.c1 * eta @ K @ eta
                      + self.c0 * eta @ M @ eta)


def assemble_wall(wall: WallModel, dt, dofmap, eta_prev, eta_dot_prev, builder, rhs):
    """Backward-Euler string blocks.

    ``eta_dot`` rows hold the momentum balance
    rho_s (eta_dot - eta_dot_prev)/dt + c1 (eta', w') + c0 (eta, w);
    ``eta`` rows hold the kinematic relation eta - dt eta_dot = eta_prev.
    Loads and interface terms are added elsewhere.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    M, K = wall.matrices()
    e, v = dofmap.dofs("eta"), dofmap.dofs("eta_dot")
    Mc, Kc = M.tocoo(), K.tocoo()
    builder.add(v[Mc.row], v[Mc.col], wall.rho_s / dt * Mc.data)
    builder.add(v[Kc.row], e[Kc.col], wall.c1 * Kc.data)
    builder.add(v[Mc.row], e[Mc.col], wall.c0 * Mc.data)
    rhs[v] += wall.rho_s / dt * (M @ eta_dot_prev)
    builder.add(e, e, 1.0)
    builder.add(e, v, -dt)
    rhs[e] += eta_prev
    return builder, rhs


@dataclass(eq=False)
class StepInfo:
    newton_iterations: int
    residuals: list
    contact: ContactState
    regime: np.ndarray = field(default=None)


class ChannelContactProblem:
    """Channel with elastic top wall over a porous bottom layer.

    ``params.pbar`` is the external pressure pushing the wall down; the two
    channel ends are open at zero traction.  The contact floor sits
    ``params.g_min`` above the layer, so the gap function is ``H - g_min``.
    """

    def __init__(self, params: PhysParams, geometry: ChannelGeometry = ChannelGeometry(),
                 max_iter=30, newton_tol=1e-9, line_search=5):
        self.params, self.geometry = params, geometry
        g = geometry
        self.mesh = generate_channel_mesh(g.length, g.height, g.nx, g.ny)
        self.trace = extract_trace(self.mesh)
        self.dofmap = fem.build_dof_map(self.mesh, self.trace, ("u", "p", "Pl", "solid", "contact"))
        self.max_iter, self.newton_tol, self.line_search = max_iter, newton_tol, line_search
        nc = g.nx + 1
        ids = np.arange(self.mesh.n_vertices)
        self.column, self.row = ids % nc, ids // nc
        self.wall = WallModel(self.mesh.vertices[:nc, 0].copy(), params.rho_s, params.c1, params.c0)
        self.weights = self.wall.nodal_weights()
        self.dx = g.length / g.nx
        self.gamma_c = params.gamma_c if params.gamma_c is not None else params.c1 / self.dx
        self.gamma_fsi = params.gamma_fsi if params.gamma_fsi is not None else 100.0 * params.mu
        self.gap = np.full(nc, g.height - params.g_min)
        ends = [0, nc - 1]
        self._clamped = np.concatenate([self.dofmap.dofs(f)[ends] for f in ("eta", "eta_dot", "lam")])
        assert np.array_equal(self.trace.vertex_ids, np.arange(nc))
        assert np.array_equal(self.dofmap.nodes["eta"], ids[-nc:])
        # top edges (column i -> i+1) and the triangle below each
        e2t = edge_triangle_map(self.mesh.triangles)
        top = ids[-nc:]
        self.top_edges = np.column_stack([top[:-1], top[1:]])
        self.top_tris = np.array([e2t[(a, b)][0] for a, b in self.top_edges.tolist()])

    # -- geometry
    def coords(self, eta):
        H = self.geometry.height
        col_h = H + np.asarray(eta)
        if np.any(col_h < self.params.g_min - 1e-9 * H):
            raise GeometryError(f"wall below the contact floor: min column height {col_h.min():.3e}")
        col_h = np.maximum(col_h, self.params.g_min)
        X = self.mesh.vertices.copy()
        X[:, 1] = col_h[self.column] * self.row / self.geometry.ny
        return X

    def mesh_velocity(self, eta_dot):
        w = np.zeros((self.mesh.n_vertices, 2))
        w[:, 1] = np.asarray(eta_dot)[self.column] * self.row / self.geometry.ny
        return w

    def initial_state(self):
        return CoupledState.zeros(self.dofmap)

    def contact_state(self, state):
        d_n = -np.asarray(state.eta)
        p_gamma, active, _, _, _ = contact_terms(d_n, state.lam, self.gap, self.gamma_c)
        return ContactState(p_gamma, active, np.asarray(state.lam), self.gap, d_n - self.gap, self.weights)

    def min_gap(self, state):
        return min_gap(state, self.gap)

    # -- assembly
    def _assemble_base(self, contact, X, x_prev, prev, dt, t):
        """Linear part of the step for the coupling regimes ``contact`` (per wall node).

        The complementarity rows are left empty (apart from the clamped ends)
        and filled per active set by :meth:`_complementarity`.
        """
        P, dm = self.params, self.dofmap
        n = dm.n_dofs
        B, rhs = fem.assemble_stokes_block(
            self.mesh, dm, P, dt, x_prev, coords=X, mesh_velocity=self.mesh_velocity(prev.eta_dot),
            h_stab=fem.min_altitudes(X, self.mesh.triangles))
        fem.assemble_surface_darcy(self.trace, dm, P.eps_k_tau, builder=B)
        fem.assemble_interface_coupling(self.trace, dm, P, builder=B, lumped=True, vertex_mask=~contact)
        assemble_wall(self.wall, dt, dm, prev.eta, prev.eta_dot, B, rhs)
        e, v, pl, lm = (dm.dofs(f) for f in ("eta", "eta_dot", "Pl", "lam"))
        w = self.weights

        # wall on the layer: (sigma_p, w) with wall normal velocity -eta_dot, and -(d_dot_n, q_l)
        a = np.flatnonzero(contact)
        B.add(v[a], pl[a], -w[a])
        B.add(v[a], v[a], -P.sigma_p_sign * P.penalty * w[a])
        B.add(pl[a], v[a], w[a])
        # contact pressure acts upward on the wall
        B.add(v, lm, -w)
        # external load pushes the wall down
        rhs[v] -= P.pbar(t) * w
        self._nitsche(B, rhs, X, contact)

        A = B.tocsr()
        # frozen fluid in contact columns; clamped wall ends
        dead = np.flatnonzero(contact[self.column])
        ends = np.array([0, len(w) - 1])
        fixed = np.concatenate([dm.lookup["ux"][dead], dm.lookup["uy"][dead], e[ends], v[ends], lm[ends]])
        prow = dm.lookup["p"][dead]
        keep = np.ones(n)
        keep[fixed] = 0.0
        keep[prow] = 0.0
        R = fem.CooBuilder(n)
        R.add(fixed, fixed, 1.0)
        R.add(prow, prow, 1.0)
        R.add(prow, pl[self.column[dead]], -1.0)
        A = (sp.diags(keep) @ A + R.tocsr()).tocsr()
        A.sum_duplicates()
        A.sort_indices()
        return fem.SparseSystem(A, rhs * keep)

    def _complementarity(self, base, active):
        """Add the rows of lam - gamma_c [P_gamma]_+ = 0, linear for a fixed active set."""
        dm = self.dofmap
        e, lm = dm.dofs("eta"), dm.dofs("lam")
        inner = np.arange(1, len(lm) - 1)
        act = active[inner]
        B = fem.CooBuilder(dm.n_dofs)
        # d(d_n)/d(eta) = -1, so the active row reads gamma_c (eta + g) = 0
        B.add(lm[inner], e[inner], np.where(act, self.gamma_c, 0.0))
        B.add(lm[inner], lm[inner], np.where(act, 0.0, 1.0))
        rhs = base.rhs.copy()
        rhs[lm[inner]] = np.where(act, -self.gamma_c * self.gap[inner], 0.0)
        A = (base.matrix + B.tocsr()).tocsr()
        A.eliminate_zeros()
        A.sort_indices()
        return fem.SparseSystem(A, rhs)

    def _nitsche(self, B, rhs, X, active):
        """Symmetric Nitsche coupling of fluid and wall at free top nodes."""
        P, dm = self.params, self.dofmap
        tris = self.mesh.triangles[self.top_tris]
        area, grads = fem.p1_geometry(X, tris)
        a_, b_ = X[self.top_edges[:, 0]], X[self.top_edges[:, 1]]
        L = np.linalg.norm(b_ - a_, axis=1)
        t = (b_ - a_) / L[:, None]
        nrm = np.column_stack([-t[:, 1], t[:, 0]])
        h_perp = 2.0 * area / L
        udofs, pdofs = fem.fluid_dof_arrays(dm, tris)
        # traction map S[e, comp, (c, k)] of mu (grad u + grad u^T) n
        gn = np.einsum("ekd,ed->ek", grads, nrm)
        S = np.zeros((len(L), 2, 6))
        for comp in range(2):
            for c in range(2):
                S[:, comp, 3 * c:3 * c + 3] = P.mu * ((comp == c) * gn + nrm[:, c, None] * grads[:, :, comp])
        vdofs = dm.dofs("eta_dot")
        for end in range(2):
            node = self.top_edges[:, end]
            col = self.column[node]
            free = ~active[col]
            if not np.any(free):
                continue
            ei = np.flatnonzero(free)
            loc = np.argmax(tris[ei] == node[ei, None], axis=1)
            om = L[ei] / 2.0
            Se, ne, ud, pd = S[ei], nrm[ei], udofs[ei], pdofs[ei]
            pn = pd[np.arange(len(ei)), loc]
            un = [ud[np.arange(len(ei)), 3 * c + loc] for c in range(2)]
            wv = vdofs[col[ei]]
            gam = self.gamma_fsi / h_perp[ei] * om
            for comp in range(2):
                # -(sigma(u,p) n, v)
                B.add(un[comp][:, None], ud, -om[:, None] * Se[:, comp, :])
                B.add(un[comp], pn, om * ne[:, comp])
                # -(u, sigma(v, -q) n) for the velocity part
                B.add(ud, un[comp][:, None], -(om[:, None] * Se[:, comp, :]))
                # penalty on u - d_dot
                B.add(un[comp], un[comp], gam)
            # wall receives the traction: +(sigma(u,p) n)_y w
            B.add(wv[:, None], ud, om[:, None] * Se[:, 1, :])
            B.add(wv, pn, -om * ne[:, 1])
            # -(u - d_dot, q n) in the continuity rows
            for comp in range(2):
                B.add(pn, un[comp], -om * ne[:, comp])
            B.add(pn, wv, om * ne[:, 1])
            # +(d_dot, sigma(v, -q) n): d_dot is vertical
            B.add(ud, wv[:, None], om[:, None] * Se[:, 1, :])
            # penalty cross terms
            B.add(un[1], wv, -gam)
            B.add(wv, un[1], -gam)
            B.add(wv, wv, gam)

    # -- residual and Newton
    def _active(self, z):
        d = self.dofmap
        _, active, _, _, _ = contact_terms(-z[d.slice("eta")], z[d.slice("lam")], self.gap, self.gamma_c)
        active[[0, -1]] = False
        return active

    def residual(self, z, base, cache=None):
        """Nonlinear residual F(z): the linear rows plus lam - gamma_c [P_gamma]_+."""
        sys = self._system(base, self._active(z), cache)
        return sys.matrix @ z - sys.rhs

    def _system(self, base, active, cache=None):
        key = active.tobytes()
        if cache is not None and key in cache:
            return cache[key]
        sys = self._complementarity(base, active)
        if cache is not None:
            cache[key] = sys
        return sys

    def step(self, state: CoupledState, dt, return_info=False):
        """One backward-Euler step.

        Geometry and coupling regimes come from ``state``; the contact
        complementarity is solved implicitly by semismooth Newton (an active
        set iteration, since the max is the only nonlinearity).
        """
        if not dt > 0:
            raise ValueError("dt must be positive")
        dm = self.dofmap
        t = state.time + dt
        X = self.coords(state.eta)
        regime = self.contact_state(state).active
        base = self._assemble_base(regime, X, state.to_vector(dm), state, dt, t)
        cache = {}
        z = state.to_vector(dm)
        r0 = np.linalg.norm(self.residual(z, base, cache))
        history = [r0]
        tol = self.newton_tol * (1.0 + r0)
        for it in range(1, self.max_iter + 1):
            active = self._active(z)
            sol = fem.solve_linear(self._system(base, active, cache))
            sol[self._clamped] = 0.0        # identity rows; LU round-off would leave ~1e-16
            dz = sol - z
            tried, alpha = [], 1.0
            for _ in range(self.line_search + 1):
                cand = z + alpha * dz
                nc = np.linalg.norm(self.residual(cand, base, cache))
                tried.append((nc, cand))
                if nc < history[-1] or nc <= tol:
                    break
                alpha *= 0.5
            rn, z = min(tried, key=lambda c: c[0])
            if rn >= history[-1]:
                rn, z = tried[0]
            history.append(rn)
            if rn <= tol and np.array_equal(self._active(z), active):
                new = CoupledState.from_vector(dm, z, t)
                if return_info:
                    return new, StepInfo(it, history, self.contact_state(new), regime)
                return new
        raise ConvergenceError(f"semismooth Newton did not converge in {self.max_iter} iterations", history)

    def regimes(self, contact):
        """Coupling regime of every interface quadrature point (nodal rule) for wall regimes ``contact``.

        Returns a dict ``{"wall": [...], "layer": [...]}`` of regime names per node.
        """
        wall = np.where(contact, REGIME_CONTACT, REGIME_NITSCHE)
        layer = np.where(contact, REGIME_CONTACT, REGIME_LAYER_FLUID)
        return {"wall": wall, "layer": layer}

    # -- diagnostics
    def layer_normal_velocity(self, state):
        """Normal velocity entering the layer at each trace vertex: u.n, or the wall's d_dot.n in contact."""
        active = self.contact_state(state).active
        u_n = -state.u[: self.geometry.nx + 1, 1]
        return np.where(active, -np.asarray(state.eta_dot), u_n)

    def seepage_flux(self, state):
        """Gross flux into the layer (positive part of the normal velocity, nodal rule)."""
        return float(np.sum(self.weights * np.maximum(self.layer_normal_velocity(state), 0.0)))

    def net_layer_flux(self, state):
        return float(np.sum(self.weights * self.layer_normal_velocity(state)))

    def kinetic_energy(self, state):
        P = self.params
        X = self.coords(state.eta)
        area, _ = fem.p1_geometry(X, self.mesh.triangles)
        udofs, _ = fem.fluid_dof_arrays(self.dofmap, self.mesh.triangles)
        x = state.to_vector(self.dofmap)
        M = fem.mass_kernel(area)
        ef = sum(np.einsum("ei,eij,ej->", x[udofs[:, 3 * c:3 * c + 3]], M, x[udofs[:, 3 * c:3 * c + 3]])
                 for c in range(2))
        Mw, _ = self.wall.matrices()
        return float(0.5 * P.rho_f * ef + 0.5 * P.rho_s * state.eta_dot @ Mw @ state.eta_dot)

    def elastic_energy(self, state):
        return float(self.wall.energy(state.eta, np.zeros_like(state.eta)))


def min_gap(state, gap):
    """Smallest distance g - d_n between wall and contact floor over the wall nodes."""
    return float(np.min(np.asarray(gap) + np.asarray(state.eta)))


def step_coupled(state, dt, params, geometry=ChannelGeometry(), problem=None):
    prob = problem or ChannelContactProblem(params, geometry)
    return prob.step(state, dt)
