"""Two reservoirs joined only through the porous layer.

Runs the default scenario, prints the window fluxes and sweeps the
tangential conductivity toward the sealed limit.

    python3 scripts/two_reservoir.py --out runs/two_reservoir
"""
import argparse
from dataclasses import replace
from pathlib import Path

from seepage import cli
from seepage.config import default_scenario
from seepage.io import CsvSeries


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/two_reservoir")
    ap.add_argument("--cells", type=int, default=None, help="cells per unit length")
    args = ap.parse_args()
    out = Path(args.out)
    scen = default_scenario("two_reservoir")
    if args.cells:
        scen = replace(scen, geometry=replace(scen.geometry, cells_per_unit=args.cells))
    cli.run(scen, out)

    w1, w2 = scen.geometry.windows
    with CsvSeries(out / "seal_limit.csv", ("eps_k_tau", "flux_res1", "flux_res2", "flux_total")) as csv:
        for ekt in (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6):
            s = replace(scen, params=scen.params.with_(k_tau=ekt / scen.params.epsilon))
            prob = cli.two_reservoir_problem(s)
            state = prob.steady()
            f1, f2 = prob.flux(state, w1), prob.flux(state, w2)
            csv.write(ekt, f1, f2, prob.flux(state))
            print(f"eps*K_tau={ekt:8.1e}  window fluxes {f1:+.4e} {f2:+.4e}")


if __name__ == "__main__":
    main()
