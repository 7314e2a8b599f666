"""Command-line front end: ``sknr solve | spectrum | anneal | experiment``.

Exit codes: 0 success, 1 input error, 2 solver stopped at max_iter,
3 eigensolver failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from .core import CostMatrix, DiscreteMeasure, EotProblem
from .harness import (
    EXPERIMENT_KINDS,
    SYNTHETIC_FAMILIES,
    ExperimentSpec,
    OracleError,
    PointCloud,
    oracle_solve,
    problem_from_clouds,
    run_experiment,
    synthetic_problem,
)
from .solver import WARM_MODES, AnnealSchedule, SolverConfig, anneal, build_basis, solve
from .spectral import EigensolverError, spectrum_report

log = logging.getLogger("sknr")

EXIT_OK, EXIT_INPUT, EXIT_MAXITER, EXIT_EIGEN = 0, 1, 2, 3
WEIGHT_RENORM_TOL = 1e-9

TRACE_HEADER = ("iter", "marginal_error", "marginal_error_inf", "semi_dual_value",
                "newton_attempted", "newton_accepted", "time_ms")
ANNEAL_HEADER = ("stage", "epsilon", "iter", "marginal_error", "semi_dual_value",
                 "newton_accepted", "time_ms")


class InputError(ValueError):
    pass


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _parse_float(token: str, path, line: int, col: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise InputError(f"{path}:{line}:{col}: not a number: {token.strip()!r}") from None
    if not math.isfinite(value):
        raise InputError(f"{path}:{line}:{col}: non-finite value {token.strip()!r}")
    return value


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def read_table(path) -> tuple[Optional[list[str]], np.ndarray]:
    """Read a numeric CSV with an optional header row; report errors as ``file:line:col``."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if r and any(t.strip() for t in r)]
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    if not rows:
        raise InputError(f"{path}: empty file")
    header = None
    if not all(_is_number(t) for t in rows[0][1]):
        header = [t.strip() for t in rows[0][1]]
        rows = rows[1:]
        if not rows:
            raise InputError(f"{path}: header but no data")
    width = len(header) if header else len(rows[0][1])
    data = []
    for line, row in rows:
        if len(row) != width:
            raise InputError(f"{path}:{line}:{len(row)}: expected {width} columns, found {len(row)}")
        data.append([_parse_float(t, path, line, c) for c, t in enumerate(row, start=1)])
    return header, np.array(data, dtype=float)


def _measure(weights: np.ndarray, path) -> DiscreteMeasure:
    if np.any(weights <= 0):
        raise InputError(f"{path}: weights must be strictly positive")
    total = math.fsum(weights)
    if abs(total - 1.0) > WEIGHT_RENORM_TOL:
        log.warning("%s: weights sum to %.17g, renormalising", path, total)
    return DiscreteMeasure.normalized(weights)


def read_point_cloud(path) -> PointCloud:
    """One point per row; a header whose last name is ``weight`` marks a weight column."""
    header, data = read_table(path)
    if header and header[-1].lower() == "weight":
        if data.shape[1] < 2:
            raise InputError(f"{path}: weight column but no coordinates")
        return PointCloud(data[:, :-1], _measure(data[:, -1], path))
    return PointCloud.uniform(data)


def read_weights(path, size: int) -> DiscreteMeasure:
    _, data = read_table(path)
    w = data.reshape(-1)
    if w.size != size:
        raise InputError(f"{path}: {w.size} weights for {size} support points")
    return _measure(w, path)


def write_vector(path, v) -> None:
    Path(path).write_text("".join(fmt(x) + "\n" for x in np.asarray(v).reshape(-1)))


def write_matrix(path, M) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(M):
            w.writerow([fmt(x) for x in row])


def write_rows(path, rows: Sequence[dict], header: Optional[Sequence[str]] = None) -> None:
    with open(path, "w", newline="") as fh:
        if not rows and header is None:
            return
        header = list(header or rows[0].keys())
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(row[h]) for h in header])


def _write_solution(out: Path, prefix: str, result) -> None:
    write_vector(out / f"{prefix}f.csv", result.potentials.f)
    write_vector(out / f"{prefix}g.csv", result.potentials.g)
    write_matrix(out / f"{prefix}coupling.csv", result.coupling.plan)


# ---------------------------------------------------------------------------
# instance selection
# ---------------------------------------------------------------------------

def _add_instance_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--points", nargs=2, metavar=("SRC", "TGT"),
                     help="point-cloud CSVs (squared Euclidean cost)")
    src.add_argument("--cost", metavar="FILE", help="cost matrix CSV")
    src.add_argument("--synthetic", choices=SYNTHETIC_FAMILIES, help="named synthetic family")
    p.add_argument("--alpha", metavar="FILE", help="source weights for --cost (default uniform)")
    p.add_argument("--beta", metavar="FILE", help="target weights for --cost (default uniform)")
    p.add_argument("--seed", type=int, default=0, help="seed for --synthetic (default 0)")
    p.add_argument("--n", type=int, help="source size for --synthetic")
    p.add_argument("--m", type=int, help="target size for --synthetic")


def load_problem(args, epsilon: float) -> EotProblem:
    if args.points:
        return problem_from_clouds(read_point_cloud(args.points[0]), read_point_cloud(args.points[1]), epsilon)
    if args.cost:
        _, C = read_table(args.cost)
        cost = CostMatrix(C)
        a = read_weights(args.alpha, cost.n) if args.alpha else DiscreteMeasure.uniform(cost.n)
        b = read_weights(args.beta, cost.m) if args.beta else DiscreteMeasure.uniform(cost.m)
        return EotProblem(cost, a, b, epsilon)
    return synthetic_problem(args.synthetic, args.seed, epsilon, args.n, args.m)


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def _eps_list(text: str) -> tuple[float, ...]:
    parts = [t for t in text.split(",") if t.strip()]
    if not parts:
        raise argparse.ArgumentTypeError("empty epsilon list")
    return tuple(_positive(t) for t in parts)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_solve(args) -> int:
    if args.ell > 0 and args.basis_from is None:
        raise InputError("--ell > 0 requires --basis-from EPS")
    problem = load_problem(args, args.epsilon)
    config = SolverConfig(args.tol, args.max_iter, args.ell)
    basis = None
    if args.ell > 0:
        coarse = problem.with_epsilon(args.basis_from)
        warm = solve(coarse, SolverConfig(args.tol, args.max_iter, trace_enabled=False))
        if not warm.converged:
            log.warning("basis solve at eps=%g stopped at max_iter", args.basis_from)
        basis = build_basis(coarse, warm.potentials, args.ell)
    result = solve(problem, config, basis=basis)
    out = _out_dir(args.out)
    _write_solution(out, "", result)
    write_rows(out / "trace.csv", [
        dict(iter=r.index, marginal_error=r.marginal_error, marginal_error_inf=r.marginal_error_inf,
             semi_dual_value=r.semi_dual_value, newton_attempted=r.newton_attempted,
             newton_accepted=r.newton_accepted, time_ms=1e3 * r.wall_time)
        for r in result.trace], TRACE_HEADER)
    err = result.trace[-1].marginal_error if result.trace else float("nan")
    print(f"converged={str(result.converged).lower()} iters={result.iterations} marginal_error={err:.6e}")
    return EXIT_OK if result.converged else EXIT_MAXITER


def cmd_spectrum(args) -> int:
    out = _out_dir(args.out)
    for eps in args.epsilons:
        problem = load_problem(args, eps)
        oracle = oracle_solve(problem)
        report = spectrum_report(problem, oracle.potentials, args.k, include_vectors=args.vectors)
        path = out / f"spectrum_eps{eps!r}.json"
        path.write_text(json.dumps(report.to_json_dict(), indent=1) + "\n")
        print(f"epsilon={eps!r} rho1={report.rhos[0]:.12g} -> {path}")
    return EXIT_OK


def cmd_anneal(args) -> int:
    problem = load_problem(args, args.schedule[0])
    schedule = AnnealSchedule(args.schedule, args.warm, args.refresh_basis)
    if args.warm == "spectral" and args.ell < 1:
        raise InputError("--warm spectral requires --ell >= 1")
    stages = anneal(problem, schedule, SolverConfig(args.tol, args.max_iter, args.ell))
    out = _out_dir(args.out)
    rows = []
    for stage, (eps, res) in enumerate(zip(schedule.epsilons, stages)):
        _write_solution(out, f"stage{stage}_", res)
        rows += [dict(stage=stage, epsilon=eps, iter=r.index, marginal_error=r.marginal_error,
                      semi_dual_value=r.semi_dual_value, newton_accepted=r.newton_accepted,
                      time_ms=1e3 * r.wall_time) for r in res.trace]
        err = res.trace[-1].marginal_error if res.trace else float("nan")
        print(f"stage={stage} epsilon={eps!r} converged={str(res.converged).lower()} "
              f"iters={res.iterations} marginal_error={err:.6e}")
    write_rows(out / "anneal_trace.csv", rows, ANNEAL_HEADER)
    return EXIT_OK if all(r.converged for r in stages) else EXIT_MAXITER


CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "seeds", "output_dir"],
    "properties": {
        "kind": {"enum": list(EXPERIMENT_KINDS)},
        "family": {"enum": list(SYNTHETIC_FAMILIES)},
        "n": {"type": ["integer", "null"], "minimum": 1},
        "m": {"type": ["integer", "null"], "minimum": 1},
        "seeds": {"type": "array", "items": {"type": "integer"}},
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "basis_from": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "ells": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "epsilons": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "warm_modes": {"type": "array", "items": {"enum": list(WARM_MODES)}},
        "ell": {"type": "integer", "minimum": 0},
        "refresh_basis": {"type": "boolean"},
        "k": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "max_iter": {"type": "integer", "minimum": 1},
        "output_dir": {"type": "string"},
    },
}


def load_run_config(path) -> tuple[ExperimentSpec, Path, str]:
    """Validate a run-config JSON; returns the spec, the output root and the config hash."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if isinstance(doc, dict) and "seeds" in doc and doc["seeds"] == []:
        raise InputError(f"{path}: no seeds")
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        unknown = sorted(set(doc) - set(CONFIG_SCHEMA["properties"])) if isinstance(doc, dict) else []
        lines = [f"unknown keys: {', '.join(unknown)}"] if unknown else []
        lines += [f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errors]
        raise InputError(f"{path}: invalid config\n  " + "\n  ".join(lines))
    params = {k: v for k, v in doc.items() if k != "output_dir"}
    try:
        spec = ExperimentSpec(**params)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    canonical = json.dumps(asdict(spec), sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(canonical.encode()).hexdigest()[:12]
    return spec, Path(doc["output_dir"]), digest


def cmd_experiment(args) -> int:
    spec, root, digest = load_run_config(args.config)
    workers = max(1, int(os.environ.get("SKNR_THREADS", "1") or 1))
    result = run_experiment(spec, workers=workers)
    out = _out_dir(root / digest)
    (out / "config.json").write_text(json.dumps(asdict(spec), sort_keys=True, indent=1) + "\n")
    write_rows(out / "traces.csv", result.traces)
    write_rows(out / "summary.csv", result.summary)
    if spec.kind == "spectrum":
        write_rows(out / "spectrum.csv", result.spectrum)
    # wall times vary run to run, so they stay out of the CSVs
    (out / "timings.json").write_text(json.dumps(result.timings, indent=1) + "\n")
    print(f"rows={len(result.traces)} summary={len(result.summary)} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sknr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def solver_args(p):
        p.add_argument("--tol", type=_positive, default=1e-9, help="marginal-error tolerance (default 1e-9)")
        p.add_argument("--max-iter", type=int, default=100_000, help="iteration budget (default 100000)")
        p.add_argument("--out", default="sknr-out", help="output directory (default ./sknr-out)")

    p = sub.add_parser("solve", help="solve one EOT problem with SK or SK-NR(ell)")
    _add_instance_args(p)
    p.add_argument("--epsilon", type=_positive, required=True, help="regularisation")
    p.add_argument("--ell", type=int, default=0, help="Newton subspace dimension (default 0 = plain SK)")
    p.add_argument("--basis-from", type=_positive, metavar="EPS",
                   help="regularisation at which the spectral basis is computed")
    solver_args(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("spectrum", help="write top modes of the linearised operator as JSON")
    _add_instance_args(p)
    p.add_argument("--epsilons", type=_eps_list, required=True, help="comma-separated list")
    p.add_argument("--k", type=int, default=10, help="number of modes (default 10)")
    p.add_argument("--vectors", action="store_true", help="include eigenvectors")
    p.add_argument("--out", default="sknr-out", help="output directory (default ./sknr-out)")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("anneal", help="solve along a decreasing epsilon schedule")
    _add_instance_args(p)
    p.add_argument("--schedule", type=_eps_list, required=True, help="comma-separated decreasing epsilons")
    p.add_argument("--warm", choices=WARM_MODES, default="potentials", help="warm start (default potentials)")
    p.add_argument("--ell", type=int, default=0, help="Newton subspace dimension for --warm spectral")
    p.add_argument("--refresh-basis", action="store_true",
                   help="recompute the basis at every stage instead of reusing the first one")
    solver_args(p)
    p.set_defaults(func=cmd_anneal)

    p = sub.add_parser("experiment", help="run a batch of paired experiments from a JSON config")
    p.add_argument("--config", required=True, help="run-config JSON file")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EigensolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EIGEN
    except OracleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MAXITER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
