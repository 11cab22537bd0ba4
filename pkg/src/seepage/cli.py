"""Command line driver: ``seepage run | verify | mesh``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import fem, verify
from .config import ConfigError, Scenario, default_scenario, parse_config
from .fsi_contact import ChannelContactProblem, ConvergenceError, GeometryError
from .io import CsvSeries, write_vtk_polyline, write_vtk_triangles
from .mesh import MeshError, extract_trace, generate_channel_mesh, generate_two_reservoir_mesh, write_mesh
from .stokes_darcy import CoupledState, StokesDarcyProblem

CSV_COLUMNS = {
    "two_reservoir": ("t", "flux_res1", "flux_res2", "max_Pl"),
    "channel_contact": ("t", "min_gap", "contact_length", "flux_total"),
}


# ---------------------------------------------------------------- scenarios

def two_reservoir_problem(scenario: Scenario):
    mesh = generate_two_reservoir_mesh(scenario.geometry)
    trace = extract_trace(mesh)
    return StokesDarcyProblem(mesh, trace, scenario.params, pl_dirichlet=scenario.pl_dirichlet)


def two_reservoir_series(scenario: Scenario, problem=None):
    """Yield ``(state, row)`` after every time step of the two-reservoir run."""
    prob = problem or two_reservoir_problem(scenario)
    w1, w2 = scenario.geometry.windows
    state = CoupledState.zeros(prob.dofmap)
    for k in range(scenario.n_steps):
        state = prob.step(state, scenario.dt)
        t = (k + 1) * scenario.dt
        yield state, (t, prob.flux(state, w1), prob.flux(state, w2), float(np.max(state.P_l)))


def channel_contact_problem(scenario: Scenario):
    return ChannelContactProblem(scenario.params, scenario.geometry, max_iter=scenario.max_iter,
                                 newton_tol=scenario.newton_tol)


def channel_contact_series(scenario: Scenario, problem=None):
    """Yield ``(state, info, row)`` after every converged step of the channel-contact run."""
    prob = problem or channel_contact_problem(scenario)
    state = prob.initial_state()
    for k in range(scenario.n_steps):
        state, info = prob.step(state, scenario.dt, return_info=True)
        t = (k + 1) * scenario.dt
        yield state, info, (t, prob.min_gap(state), info.contact.active_measure, prob.seepage_flux(state))


# ---------------------------------------------------------------- snapshots

def _snapshot_two_reservoir(out, k, prob, state):
    mesh, trace = prob.mesh, prob.trace
    u = np.zeros((mesh.n_vertices, 2))
    p = np.zeros(mesh.n_vertices)
    fluid = prob.dofmap.nodes["ux"]
    u[fluid], p[fluid] = state.u, state.p
    write_vtk_triangles(out / f"snapshot_{k:05d}.vtk", mesh.vertices, mesh.triangles,
                        {"velocity": u}, {"pressure": p})
    write_vtk_polyline(out / f"layer_{k:05d}.vtk", trace.coords, {"porous_pressure": state.P_l})


def _snapshot_channel(out, k, prob, state):
    mesh = prob.mesh
    disp = np.zeros((mesh.n_vertices, 2))
    disp[prob.dofmap.nodes["eta"], 1] = state.eta
    write_vtk_triangles(out / f"snapshot_{k:05d}.vtk", prob.coords(state.eta), mesh.triangles,
                        {"velocity": state.u, "displacement": disp}, {"pressure": state.p})
    write_vtk_polyline(out / f"layer_{k:05d}.vtk", prob.trace.coords, {"porous_pressure": state.P_l})


# ---------------------------------------------------------------- commands

def run_verify(suite="all", out_dir=None, stream=None):
    stream = stream or sys.stdout
    tables, ok = verify.run_suite(suite)
    for t in tables:
        print(t.format(), file=stream)
        print(file=stream)
        if out_dir is not None:
            name = t.name.split(" (")[0].replace(" ", "_").lower()
            (Path(out_dir) / f"verify_{name}.csv").write_text(t.to_csv(), encoding="ascii")
    print("verification " + ("passed" if ok else "FAILED"), file=stream)
    return 0 if ok else 1


def run(scenario: Scenario, out_dir, stream=None):
    """Run a scenario, writing the CSV series and VTK snapshots to ``out_dir``.  Returns an exit status."""
    stream = stream or sys.stdout
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if scenario.kind == "verify":
        return run_verify(scenario.suite, out, stream)
    if scenario.kind == "two_reservoir":
        prob = two_reservoir_problem(scenario)
        series = two_reservoir_series(scenario, prob)
        snap = _snapshot_two_reservoir
        state0 = CoupledState.zeros(prob.dofmap)
    else:
        prob = channel_contact_problem(scenario)
        series = ((s, row) for s, _, row in channel_contact_series(scenario, prob))
        snap = _snapshot_channel
        state0 = prob.initial_state()
    every = scenario.output_every if scenario.write_vtk else 0
    with CsvSeries(out / scenario.csv_name, CSV_COLUMNS[scenario.kind]) as csv:
        if every:
            snap(out, 0, prob, state0)
        try:
            for k, (state, row) in enumerate(series, 1):
                csv.write(*row)
                if every and k % every == 0:
                    snap(out, k, prob, state)
        except (ConvergenceError, GeometryError, fem.SingularMatrixError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    print(f"wrote {out / scenario.csv_name}", file=stream)
    return 0


def mesh_command(scenario_name, out_path, config=None):
    scen = parse_config(config) if config else default_scenario(scenario_name)
    if scen.kind != scenario_name:
        raise ConfigError(f"config describes {scen.kind!r}, not {scenario_name!r}", "kind")
    g = scen.geometry
    if scenario_name == "two_reservoir":
        mesh = generate_two_reservoir_mesh(g)
    else:
        mesh = generate_channel_mesh(g.length, g.height, g.nx, g.ny)
    write_mesh(mesh, out_path)
    return mesh


def build_parser():
    ap = argparse.ArgumentParser(prog="seepage", description="Stokes flow over a thin porous layer, "
                                 "with an elastic wall that can touch it.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    v = sub.add_parser("verify", help="run convergence checks")
    v.add_argument("--suite", choices=("mms", "poiseuille", "slip", "all"), default="all")
    v.add_argument("--out", default=None, help="directory for CSV tables")
    m = sub.add_parser("mesh", help="write the default mesh of a scenario")
    m.add_argument("--scenario", choices=("two_reservoir", "channel_contact"), required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--config", default=None, help="take geometry from this scenario file")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return run(parse_config(args.config), args.out)
        if args.command == "verify":
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
            return run_verify(args.suite, args.out)
        mesh = mesh_command(args.scenario, args.out, args.config)
        print(f"wrote {args.out}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (MeshError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
