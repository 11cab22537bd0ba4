import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import cholesky
from scipy.optimize import lsq_linear

from seepage import fem
from seepage.fsi_contact import (
    REGIME_CONTACT, REGIME_LAYER_FLUID, REGIME_NITSCHE,
    ChannelContactProblem, ChannelGeometry, ConvergenceError, GeometryError, WallModel,
    assemble_wall, contact_terms, min_gap, sigma_p, solve_obstacle, step_coupled,
)
from seepage.mesh import generate_channel_mesh
from seepage.stokes_darcy import CoupledState, LoadSchedule, PhysParams

SMALL = ChannelGeometry(length=4.0, height=1.0, nx=16, ny=4)


def test_sigma_p_examples():
    p = PhysParams()
    assert sigma_p(1.0, 0.0, p) == -1.0
    assert sigma_p(0.0, 4.0, p, in_contact=True) == pytest.approx(-0.01, rel=1e-15)
    assert sigma_p(0.0, 4.0, p.with_(sigma_p_sign=1.0)) == pytest.approx(0.01, rel=1e-15)


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_sigma_p_impermeable_limit(P_l, v):
    p = PhysParams(k_n=1e12)
    assert sigma_p(P_l, v, p) == pytest.approx(-P_l, abs=1e-12)


def test_sigma_p_rejects_nonpositive_kn():
    bad = type("P", (), {"k_n": 0.0, "epsilon": 0.01, "sigma_p_sign": -1.0, "penalty": 0.0})()
    with pytest.raises(ValueError):
        sigma_p(1.0, 0.0, bad)


def test_contact_terms_inactive():
    p, active, res, d_dn, d_lam = contact_terms([-0.5, -0.1], [0.0, 0.0], [0.0, 0.0], 100.0)
    assert not active.any()
    assert np.array_equal(res, [0.0, 0.0]) and np.array_equal(d_dn, [0.0, 0.0])


def test_contact_terms_pointwise():
    p_gamma, active, res, _, _ = contact_terms(0.01, 0.0, 0.0, 100.0)
    assert active
    assert 100.0 * max(p_gamma, 0.0) == pytest.approx(1.0, rel=1e-14)
    assert res == pytest.approx(-1.0, rel=1e-14)


def test_contact_terms_rejects_gamma():
    with pytest.raises(ValueError):
        contact_terms(0.0, 0.0, 0.0, 0.0)


@given(st.integers(2, 12), st.floats(0.5, 20.0), st.floats(0.01, 0.5), st.floats(1.0, 1e3))
@settings(max_examples=30, deadline=None)
def test_obstacle_matches_bounded_least_squares(n, load, gap, gamma):
    """Semismooth Newton against an independent bounded least-squares solve of the same QP."""
    h = 1.0 / (n + 1)
    K = (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / h
    f = np.full(n, load * h)
    g = np.full(n, gap)
    w = np.full(n, h)
    d, lam, active = solve_obstacle(K, f, g, w, gamma)
    # min 1/2 d'Kd - f'd, d <= g  ==  min |R d - R^-T f|^2 with K = R'R
    R = cholesky(K)
    ref = lsq_linear(R, np.linalg.solve(R.T, f), bounds=(-np.inf, g), method="bvls", tol=1e-14)
    assert np.abs(d - ref.x).max() <= 1e-8
    lam_ref = (f - K @ ref.x) / w
    assert np.abs(lam - lam_ref).max() <= 1e-6 * (1 + np.abs(lam_ref).max())
    # KKT triple
    assert np.max(d - g) <= 1e-8
    assert lam.min() >= -1e-8
    assert np.max(np.abs(lam * (d - g))) <= 1e-8
    assert np.array_equal(active, lam > 0)


def _wall_dofmap(nx):
    m = generate_channel_mesh(1.0, 0.2, nx, 1)
    return fem.build_dof_map(m, None, ("solid",))


def _wall_solve(nx, c1, load, dt, steps, eta0=None, rho_s=1.0, c0=0.0):
    dm = _wall_dofmap(nx)
    wall = WallModel(np.linspace(0.0, 1.0, nx + 1), rho_s, c1, c0)
    e, v = dm.dofs("eta"), dm.dofs("eta_dot")
    eta = np.zeros(nx + 1) if eta0 is None else eta0.copy()
    eta_dot = np.zeros(nx + 1)
    M, _ = wall.matrices()
    energies = [wall.energy(eta, eta_dot)]
    for _ in range(steps):
        B = fem.CooBuilder(dm.n_dofs)
        rhs = np.zeros(dm.n_dofs)
        assemble_wall(wall, dt, dm, eta, eta_dot, B, rhs)
        rhs[v] += load * (M @ np.ones(nx + 1))
        sys = fem.SparseSystem(B.tocsr(), rhs).apply_dirichlet(np.r_[e[[0, -1]], v[[0, -1]]], 0.0)
        x = fem.solve_linear(sys)
        eta, eta_dot = x[e], x[v]
        energies.append(wall.energy(eta, eta_dot))
    return wall.x, eta, np.array(energies)


def test_wall_static_parabola_rate():
    c1, f = 2.0, 3.0
    errs = []
    gx = np.array([0.5 - np.sqrt(0.15), 0.5, 0.5 + np.sqrt(0.15)])
    gw = np.array([5.0, 8.0, 5.0]) / 18.0
    for nx in (4, 8, 16, 32):
        x, eta, _ = _wall_solve(nx, c1, f, dt=1e8, steps=2)
        hseg = np.diff(x)
        e2 = 0.0
        for q, wq in zip(gx, gw):
            s = x[:-1] + q * hseg
            e2 += np.sum(wq * hseg * ((1 - q) * eta[:-1] + q * eta[1:] - f * s * (1 - s) / (2 * c1)) ** 2)
        errs.append(np.sqrt(e2))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert rates[-1] >= 1.9


def test_wall_zero_data_stays_zero():
    _, eta, energies = _wall_solve(8, 1.0, 0.0, 0.1, 5)
    assert not eta.any() and not energies.any()


def test_wall_energy_non_increasing():
    x = np.linspace(0.0, 1.0, 17)
    _, _, energies = _wall_solve(16, 1.0, 0.0, 0.05, 60, eta0=0.1 * np.sin(np.pi * x), c0=0.5)
    assert energies[0] > 0
    assert np.all(np.diff(energies) <= 1e-15)


def test_wall_rejects_dt():
    dm = _wall_dofmap(4)
    with pytest.raises(ValueError):
        assemble_wall(WallModel(np.linspace(0, 1, 5), 1.0, 1.0, 0.0), 0.0, dm, np.zeros(5), np.zeros(5),
                      fem.CooBuilder(dm.n_dofs), np.zeros(dm.n_dofs))


def test_rest_stays_at_rest():
    prob = ChannelContactProblem(PhysParams(pbar=0.0, k_tau=10.0), SMALL)
    s = prob.initial_state()
    for _ in range(3):
        s = prob.step(s, 0.05)
    assert not np.any(s.to_vector(prob.dofmap))
    assert prob.kinetic_energy(s) == 0.0


def test_flat_wall_gap():
    p = PhysParams()
    prob = ChannelContactProblem(p, SMALL)
    assert prob.min_gap(prob.initial_state()) == pytest.approx(SMALL.height - p.g_min)


def test_ale_geometry():
    prob = ChannelContactProblem(PhysParams(), SMALL)
    eta = -0.5 * np.sin(np.pi * np.linspace(0, 1, SMALL.nx + 1))
    X = prob.coords(eta)
    top = prob.dofmap.nodes["eta"]
    assert np.allclose(X[top, 1], SMALL.height + eta)
    assert np.array_equal(X[:, 0], prob.mesh.vertices[:, 0])
    assert np.all(prob.mesh.areas(X) > 0)
    w = prob.mesh_velocity(np.ones(SMALL.nx + 1))
    assert np.allclose(w[top, 1], 1.0) and np.allclose(w[prob.trace.vertex_ids, 1], 0.0)
    # a closed column sits on the floor
    closed = eta.copy()
    closed[4] = -SMALL.height + prob.params.g_min
    assert prob.coords(closed)[top[4], 1] == pytest.approx(prob.params.g_min)


def test_geometry_error_below_floor():
    prob = ChannelContactProblem(PhysParams(), SMALL)
    eta = np.zeros(SMALL.nx + 1)
    eta[3] = -1.5 * SMALL.height
    with pytest.raises(GeometryError):
        prob.coords(eta)


def test_regimes_partition_interface():
    prob = ChannelContactProblem(PhysParams(), SMALL)
    contact = np.zeros(SMALL.nx + 1, bool)
    contact[5:9] = True
    reg = prob.regimes(contact)
    assert set(reg["wall"][contact]) == {REGIME_CONTACT}
    assert set(reg["wall"][~contact]) == {REGIME_NITSCHE}
    assert set(reg["layer"][~contact]) == {REGIME_LAYER_FLUID}
    assert len(reg["wall"]) == len(reg["layer"]) == SMALL.nx + 1


def test_step_coupled_function():
    p = PhysParams(pbar=1.0, k_tau=10.0)
    prob = ChannelContactProblem(p, SMALL)
    a = prob.step(prob.initial_state(), 0.05)
    b = step_coupled(prob.initial_state(), 0.05, p, SMALL)
    assert np.array_equal(a.to_vector(prob.dofmap), b.to_vector(prob.dofmap))
    assert a.eta.min() < 0            # the load pushes the wall down
    assert a.eta[0] == a.eta[-1] == 0.0


def test_step_rejects_dt():
    prob = ChannelContactProblem(PhysParams(), SMALL)
    with pytest.raises(ValueError):
        prob.step(prob.initial_state(), -1.0)


def test_newton_reports_history_on_failure(contact_runs):
    run = contact_runs[1e-1]
    prob = ChannelContactProblem(run.scenario.params, run.scenario.geometry, max_iter=1)
    with pytest.raises(ConvergenceError) as info:
        prob.step(run.before_contact, run.scenario.dt)
    assert len(info.value.history) == 2


def test_kinetic_energy_decays_without_load():
    p = PhysParams(pbar=0.0, k_tau=10.0)
    prob = ChannelContactProblem(p, SMALL)
    s = prob.initial_state()
    X = prob.mesh.vertices
    u = np.column_stack([4 * X[:, 1] * (1 - X[:, 1]), np.zeros(len(X))])
    s = CoupledState(0.0, u, s.p, s.P_l, s.eta, s.eta_dot, s.lam)
    ke = [prob.kinetic_energy(s)]
    for _ in range(40):
        s = prob.step(s, 0.05)
        ke.append(prob.kinetic_energy(s))
    assert np.all(np.diff(ke) <= 0)


def test_contact_run_properties(contact_runs):
    for ekt, run in contact_runs.items():
        H = run.scenario.geometry.height
        g_min = run.scenario.params.g_min
        assert run.first_contact is not None, ekt
        for c in run.contacts:
            assert c.penetration.max() <= 1e-8 * H
            assert c.complementarity <= 1e-8
            assert c.lam.min() >= 0.0
            # active set where P_gamma > 0 coincides with positive contact pressure
            assert np.array_equal(c.active, c.lam > 0)
        assert run.min_gap.min() >= -1e-8
        # released and reopened by the end of the run
        assert run.active[-1] == 0 and run.min_gap[-1] > g_min
        assert max(run.iterations) <= run.scenario.max_iter


def test_gap_closes_monotonically_while_loading(contact_runs):
    # the default run (eps K_tau = 0.1) closes without rebounding off the squeeze film
    run = contact_runs[1e-1]
    pre = run.min_gap[run.t <= run.first_contact]
    assert len(pre) > 10
    assert np.all(np.diff(pre) <= 0)


def test_larger_tangential_permeability_touches_first(contact_runs):
    assert contact_runs[1e-1].first_contact < contact_runs[1e-3].first_contact


def test_module_min_gap():
    prob = ChannelContactProblem(PhysParams(), SMALL)
    s = prob.initial_state()
    eta = np.zeros(SMALL.nx + 1)
    eta[2] = -0.25
    s = CoupledState(0.0, s.u, s.p, s.P_l, eta, s.eta_dot, s.lam)
    assert min_gap(s, prob.gap) == pytest.approx(SMALL.height - prob.params.g_min - 0.25)
