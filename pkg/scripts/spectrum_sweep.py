"""Top modes of the linearised SK operator as eps decreases, plus basis drift.

Example:
    python3 scripts/spectrum_sweep.py --family annulus_square --n 200 --epsilons 0.256 0.128 0.064
"""

import argparse
from pathlib import Path

from sknr.cli import write_rows
from sknr.harness import SYNTHETIC_FAMILIES, ExperimentSpec, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--family", choices=SYNTHETIC_FAMILIES, default="annulus_square")
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--m", type=int, default=None)
    ap.add_argument("--epsilons", type=float, nargs="+", default=[0.256, 0.128, 0.064])
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--out", type=Path, default=Path("results/spectrum"))
    args = ap.parse_args()

    spec = ExperimentSpec(kind="spectrum", family=args.family, n=args.n, m=args.m, seeds=tuple(args.seeds),
                          epsilons=tuple(args.epsilons), k=args.k)
    result = run_experiment(spec)
    args.out.mkdir(parents=True, exist_ok=True)
    write_rows(args.out / "spectrum.csv", result.spectrum)
    write_rows(args.out / "drift.csv", result.summary)

    for eps in args.epsilons:
        vals = [r["id_plus_k_eig"] for r in result.spectrum if r["epsilon"] == eps and r["seed"] == args.seeds[0]]
        print(f"eps={eps:<6g} smallest eigenvalues of Id+K: " + " ".join(f"{v:.4f}" for v in vals))
    for r in result.summary:
        print(f"seed {r['seed']} {r['config']}: projector distance {r['projector_distance']:.3f}")
    print(f"wrote {args.out}/spectrum.csv and drift.csv")


if __name__ == "__main__":
    main()
