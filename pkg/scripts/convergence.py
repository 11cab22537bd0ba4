"""Mesh-refinement studies: surface Darcy MMS, Poiseuille and the slip limit.

    python3 scripts/convergence.py --out runs/convergence
"""
import argparse
from pathlib import Path

from seepage.cli import run_verify


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/convergence")
    ap.add_argument("--suite", default="all", choices=("mms", "poiseuille", "slip", "all"))
    args = ap.parse_args()
    Path(args.out).mkdir(parents=True, exist_ok=True)
    raise SystemExit(run_verify(args.suite, args.out))


if __name__ == "__main__":
    main()
