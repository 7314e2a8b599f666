"""Compare warm-start strategies along a decreasing eps schedule.

Example:
    python3 scripts/anneal_demo.py --n 100 --m 200 --schedule 1 0.5 0.25 0.125 --ell 8
"""

import argparse
from pathlib import Path

import numpy as np

from sknr.cli import write_rows
from sknr.harness import SYNTHETIC_FAMILIES, ExperimentSpec, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--family", choices=SYNTHETIC_FAMILIES, default="gauss2d")
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--m", type=int, default=200)
    ap.add_argument("--schedule", type=float, nargs="+", default=[1.0, 0.5, 0.25, 0.125])
    ap.add_argument("--ell", type=int, default=8)
    ap.add_argument("--refresh-basis", action="store_true")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", type=Path, default=Path("results/anneal"))
    args = ap.parse_args()

    spec = ExperimentSpec(kind="anneal", family=args.family, n=args.n, m=args.m, seeds=tuple(args.seeds),
                          epsilons=tuple(args.schedule), ell=args.ell, refresh_basis=args.refresh_basis)
    result = run_experiment(spec)
    args.out.mkdir(parents=True, exist_ok=True)
    write_rows(args.out / "traces.csv", result.traces)
    write_rows(args.out / "summary.csv", result.summary)

    for mode in spec.warm_modes:
        rows = [r for r in result.summary if r["config"] == f"warm={mode}"]
        total = np.median([r["iterations"] for r in rows])
        ok = all(r["converged"] for r in rows)
        print(f"warm={mode:<11} median total iterations {total:>7g}  all converged={ok}")
    print(f"wrote {args.out}/traces.csv and summary.csv")


if __name__ == "__main__":
    main()
