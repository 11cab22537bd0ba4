"""Elastic wall pushed onto the porous layer and released.

Runs the channel-contact scenario for two tangential conductivities and
writes the minimum-gap history of both to one CSV.

    python3 scripts/channel_contact.py --out runs/channel_contact
"""
import argparse
import time
from dataclasses import replace
from pathlib import Path

from seepage import cli
from seepage.config import default_scenario
from seepage.io import CsvSeries


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/channel_contact")
    ap.add_argument("--eps-k-tau", type=float, nargs="+", default=[1e-1, 1e-3])
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = default_scenario("channel_contact")

    histories = {}
    for ekt in args.eps_k_tau:
        scen = replace(base, params=base.params.with_(k_tau=ekt / base.params.epsilon),
                       csv_name=f"series_{ekt:g}.csv")
        t0 = time.perf_counter()
        rows, first = [], None
        for state, info, row in cli.channel_contact_series(scen):
            rows.append(row)
            if first is None and info.contact.active.any():
                first = row[0]
        histories[ekt] = rows
        print(f"eps*K_tau={ekt:g}: first contact t={first}, final gap {rows[-1][1]:.4f}, "
              f"{time.perf_counter() - t0:.1f} s")

    keys = list(histories)
    with CsvSeries(out / "min_gap.csv", ["t"] + [f"min_gap_{k:g}" for k in keys]) as csv:
        for i, row in enumerate(histories[keys[0]]):
            csv.write(row[0], *(histories[k][i][1] for k in keys))


if __name__ == "__main__":
    main()
