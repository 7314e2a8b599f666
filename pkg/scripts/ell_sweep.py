"""Iterations and tail contraction of SK-NR(ell) for several ell on paired seeds.

Example:
    python3 scripts/ell_sweep.py --n 60 --m 120 --epsilon 0.05 --basis-from 0.1 --seeds 0 1 2
"""

import argparse
from pathlib import Path

import numpy as np

from sknr.cli import write_rows
from sknr.harness import SYNTHETIC_FAMILIES, ExperimentSpec, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--family", choices=SYNTHETIC_FAMILIES, default="gauss2d")
    ap.add_argument("--n", type=int, default=60)
    ap.add_argument("--m", type=int, default=120)
    ap.add_argument("--epsilon", type=float, default=0.05)
    ap.add_argument("--basis-from", type=float, default=None,
                    help="coarser eps for the basis; default is the exact basis at --epsilon")
    ap.add_argument("--ells", type=int, nargs="+", default=[0, 2, 4, 8])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", type=Path, default=Path("results/ell_sweep"))
    args = ap.parse_args()

    spec = ExperimentSpec(kind="ell_sweep", family=args.family, n=args.n, m=args.m, seeds=tuple(args.seeds),
                          epsilon=args.epsilon, basis_from=args.basis_from, ells=tuple(args.ells))
    result = run_experiment(spec)
    args.out.mkdir(parents=True, exist_ok=True)
    write_rows(args.out / "traces.csv", result.traces)
    write_rows(args.out / "summary.csv", result.summary)

    print(f"{'ell':>4} {'median iters':>13} {'median tail rate':>17}")
    for ell in args.ells:
        rows = [r for r in result.summary if r["ell"] == ell]
        iters = np.median([r["iterations"] for r in rows])
        rate = np.median([r["tail_rate"] for r in rows])
        print(f"{ell:>4} {iters:>13g} {rate:>17.4f}")
    print(f"wrote {args.out}/traces.csv and summary.csv")


if __name__ == "__main__":
    main()
