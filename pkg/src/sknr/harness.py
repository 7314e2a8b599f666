"""Synthetic instances, a high-accuracy reference solver, and experiment runners.

Random draws use numpy's ``Philox`` counter-based bit generator keyed by
the integer seed, so a given seed yields the same clouds on every platform
and numpy version that ships Philox-4x64.

:func:`oracle_solve` is built from the core and objective primitives only and
never touches :mod:`sknr.solver`, so it can serve as ground truth for it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .core import (
    CostMatrix,
    Coupling,
    DiscreteMeasure,
    EotProblem,
    Potentials,
    coupling_from,
    ctransform_of_f,
    ctransform_of_g,
    marginal_error,
)
from .objective import full_semi_dual_hessian, semi_dual_gradient, semi_dual_value
from .spectral import build_operator

log = logging.getLogger(__name__)

ORACLE_RESIDUAL = 1e-12


def make_rng(seed: int) -> np.random.Generator:
    """Seeded ``Philox`` generator; the one source of randomness in the harness."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    weights: DiscreteMeasure

    def __post_init__(self):
        p = np.array(self.points, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if p.ndim != 2 or not np.all(np.isfinite(p)):
            raise ValueError("points must be a finite (count, d) array")
        if not isinstance(self.weights, DiscreteMeasure):
            object.__setattr__(self, "weights", DiscreteMeasure(self.weights))
        if len(self.weights) != p.shape[0]:
            raise ValueError("weights length does not match point count")
        object.__setattr__(self, "points", p)

    @classmethod
    def uniform(cls, points) -> "PointCloud":
        points = np.asarray(points, dtype=float)
        return cls(points, DiscreteMeasure.uniform(points.shape[0]))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def gaussian_cloud(count: int, mean, covariance, seed: int) -> PointCloud:
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.asarray(covariance, dtype=float)
    if count < 1:
        raise ValueError("count must be positive")
    if cov.shape != (mean.size, mean.size) or not np.allclose(cov, cov.T, rtol=0, atol=1e-14):
        raise ValueError("covariance must be a symmetric matrix matching the mean")
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("covariance is not positive definite") from None
    z = make_rng(seed).standard_normal((count, mean.size))
    return PointCloud.uniform(z @ L.T + mean)


SOURCE_GAUSSIAN = dict(mean=(0.0, 0.0), covariance=((1.0, 0.0), (0.0, 1.0)))
TARGET_GAUSSIAN = dict(mean=(4.0, 4.0), covariance=((1.0, -0.8), (-0.8, 1.0)))


def gaussian_pair(n: int, m: int, seed: int) -> tuple[PointCloud, PointCloud]:
    """Isotropic source at the origin and correlated target at (4, 4)."""
    return (gaussian_cloud(n, seed=2 * seed, **SOURCE_GAUSSIAN),
            gaussian_cloud(m, seed=2 * seed + 1, **TARGET_GAUSSIAN))


def two_moons(count_per_moon: int, noise: float, seed: int) -> tuple[PointCloud, PointCloud]:
    """Upper moon centred at (0, 0), lower moon centred at (1, 0.5); unit radii."""
    if count_per_moon < 1:
        raise ValueError("count_per_moon must be positive")
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    rng = make_rng(seed)
    t1 = rng.uniform(0.0, math.pi, count_per_moon)
    t2 = rng.uniform(0.0, math.pi, count_per_moon)
    upper = np.column_stack([np.cos(t1), np.sin(t1)])
    lower = np.column_stack([1.0 - np.cos(t2), 0.5 - np.sin(t2)])
    if noise > 0:
        upper += noise * rng.standard_normal(upper.shape)
        lower += noise * rng.standard_normal(lower.shape)
    return PointCloud.uniform(upper), PointCloud.uniform(lower)


def _sample_annulus(count: int, r_in: float, r_out: float, rng, center) -> tuple[np.ndarray, float]:
    """Rejection sampling from the bounding square; also returns the acceptance rate."""
    out = np.empty((0, 2))
    proposals = 0
    while out.shape[0] < count:
        batch = max(2 * (count - out.shape[0]), 64)
        cand = rng.uniform(-r_out, r_out, (batch, 2))
        proposals += batch
        r2 = np.einsum("ij,ij->i", cand, cand)
        keep = cand[(r2 >= r_in * r_in) & (r2 <= r_out * r_out)]
        out = np.vstack([out, keep])
    return out[:count] + np.asarray(center, dtype=float), out.shape[0] / proposals


def annulus_and_square(counts=(200, 200), radii=(0.5, 1.0), side: float = 2.0,
                       seed: int = 0, center=(0.0, 0.0)) -> tuple[PointCloud, PointCloud]:
    """Uniform samples on a square (source) and on an annulus (target), same centre."""
    n_sq, n_an = counts
    r_in, r_out = radii
    if n_sq < 1 or n_an < 1:
        raise ValueError("counts must be positive")
    if not 0 <= r_in < r_out:
        raise ValueError("need 0 <= inner radius < outer radius")
    if side <= 0:
        raise ValueError("side must be positive")
    rng = make_rng(seed)
    square = rng.uniform(-side / 2, side / 2, (n_sq, 2)) + np.asarray(center, dtype=float)
    ring, _ = _sample_annulus(n_an, r_in, r_out, rng, center)
    return PointCloud.uniform(square), PointCloud.uniform(ring)


def sq_euclidean_cost(source: PointCloud, target: PointCloud) -> CostMatrix:
    if source.dim != target.dim:
        raise ValueError(f"dimension mismatch: {source.dim} vs {target.dim}")
    diff = source.points[:, None, :] - target.points[None, :, :]
    return CostMatrix(np.einsum("ijk,ijk->ij", diff, diff))


def problem_from_clouds(source: PointCloud, target: PointCloud, epsilon: float) -> EotProblem:
    return EotProblem(sq_euclidean_cost(source, target), source.weights, target.weights, epsilon)


SYNTHETIC_FAMILIES = ("gauss2d", "moons", "annulus_square")


def synthetic_problem(family: str, seed: int, epsilon: float, n: Optional[int] = None,
                      m: Optional[int] = None) -> EotProblem:
    """Named instance families; sizes default to 200 × 400 for ``gauss2d``."""
    if family == "gauss2d":
        n = 200 if n is None else n
        src, tgt = gaussian_pair(n, 2 * n if m is None else m, seed)
    elif family == "moons":
        src, tgt = two_moons(100 if n is None else n, 0.05, seed)
    elif family == "annulus_square":
        n = 200 if n is None else n
        src, tgt = annulus_and_square((n, n if m is None else m), seed=seed)
    else:
        raise ValueError(f"unknown synthetic family {family!r}; choose from {SYNTHETIC_FAMILIES}")
    return problem_from_clouds(src, tgt, epsilon)


@dataclass(frozen=True, eq=False)
class OracleSolution:
    potentials: Potentials
    coupling: Coupling
    residual: float
    sk_iterations: int = 0
    newton_iterations: int = 0


class OracleError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def _oracle_residual(problem: EotProblem, f: np.ndarray) -> tuple[Potentials, float]:
    g = ctransform_of_f(problem, f)
    pots = Potentials(f, g).normalized(problem.alpha)
    return pots, marginal_error(problem, coupling_from(problem, pots))


def oracle_solve(problem: EotProblem, sk_iters: int = 2000, sk_tol: float = 1e-13,
                 newton_tol: float = 1e-14, max_newton: int = 200) -> OracleSolution:
    """Reference potentials: plain SK sweeps, then a damped Newton polish.

    The polish works on the full semi-dual, restricted to the orthogonal
    complement of the constants where the Hessian is negative definite,
    with backtracking on the semi-dual value.

    Raises:
        OracleError: if the final marginal error exceeds ``1e-12``.
    """
    n = problem.shape[0]
    f = np.zeros(n)
    sweeps = 0
    for sweeps in range(1, sk_iters + 1):
        g = ctransform_of_f(problem, f)
        f = ctransform_of_g(problem, g)
        f -= problem.alpha.weights @ f
        if sweeps % 25 == 0 and _oracle_residual(problem, f)[1] <= sk_tol:
            break
    basis = scipy.linalg.null_space(np.ones((1, n))) if n > 1 else np.zeros((1, 0))
    steps = 0
    last = np.inf
    for steps in range(1, max_newton + 1):
        if n == 1:
            break
        grad = semi_dual_gradient(problem, f)
        gnorm = float(np.linalg.norm(grad))
        # stop at the tolerance or once round-off stalls the quadratic phase
        if gnorm <= newton_tol or (gnorm < 1e-12 and gnorm > 0.5 * last):
            break
        last = gnorm
        H = full_semi_dual_hessian(problem, f, dense_limit=max(n, 1))
        Hr = basis.T @ H @ basis
        try:
            coords = scipy.linalg.cho_solve(scipy.linalg.cho_factor(-Hr), basis.T @ grad)
        except np.linalg.LinAlgError:
            coords = np.linalg.lstsq(-Hr, basis.T @ grad, rcond=None)[0]
        step = basis @ coords
        value = semi_dual_value(problem, f)
        t = 1.0
        while t > 1e-12:
            cand = f + t * step
            if semi_dual_value(problem, cand) >= value:
                break
            t *= 0.5
        else:
            break
        f = cand - problem.alpha.weights @ cand
    # finish on a sweep so the row marginal is exact as well
    g = ctransform_of_f(problem, f)
    f = ctransform_of_g(problem, g)
    pots, res = _oracle_residual(problem, f)
    if res > ORACLE_RESIDUAL:
        raise OracleError("oracle did not reach the target marginal error", res)
    return OracleSolution(pots, coupling_from(problem, pots), res, sweeps, steps)


@dataclass(frozen=True)
class LinearizationReport:
    scale: float
    max_residual: float
    max_ratio: float
    linear_rel_error: float
    residuals: tuple[float, ...] = field(default=())


def linearization_check(problem: EotProblem, oracle: OracleSolution, perturbation_scale: Optional[float] = None,
                        trials: int = 5, seed: int = 0, directions: Optional[Sequence] = None) -> LinearizationReport:
    """Compare the transformed perturbation against ``-K (df, dg)``.

    For a perturbation ``(df, dg)`` of the optimum, the pair
    ``((g* + dg)^{C,eps} - f*, (f* + df)^{C,eps} - g*)`` should equal
    ``-K(df, dg)`` up to a remainder of order ``||(df, dg)||_inf^2 / eps``.

    Directions are drawn from ``seed`` and normalised to unit max-norm, so
    calls with different scales but the same seed probe the same directions.
    ``linear_rel_error`` isolates the linear part with a symmetric
    difference ``(T(z* + d) - T(z* - d)) / 2``, cancelling the quadratic term.
    """
    eps = problem.epsilon
    scale = 1e-4 * eps if perturbation_scale is None else perturbation_scale
    n, m = problem.shape
    op = build_operator(problem, oracle.potentials)
    f0, g0 = oracle.potentials.f, oracle.potentials.g
    if directions is None:
        rng = make_rng(seed)
        directions = []
        for _ in range(trials):
            d = rng.uniform(-1.0, 1.0, n + m)
            directions.append(d / np.max(np.abs(d)))

    def transformed(df, dg):
        return np.concatenate([ctransform_of_g(problem, g0 + dg) - f0,
                               ctransform_of_f(problem, f0 + df) - g0])

    max_res = max_ratio = max_lin = 0.0
    residuals = []
    for d in directions:
        d = np.asarray(d, dtype=float)
        norm_inf = float(np.max(np.abs(d)))
        if norm_inf == 0.0:
            residuals.append(0.0)
            continue
        delta = scale * d / norm_inf
        df, dg = delta[:n], delta[n:]
        Rg, Rtf = op.apply_K(df, dg)
        lin = -np.concatenate([Rg, Rtf])
        plus = transformed(df, dg)
        res = float(np.max(np.abs(plus - lin)))
        minus = transformed(-df, -dg)
        central = 0.5 * (plus - minus)
        lin_err = float(np.linalg.norm(central - lin) / max(np.linalg.norm(lin), 1e-300))
        residuals.append(res)
        max_res = max(max_res, res)
        max_ratio = max(max_ratio, res / (scale * scale / eps))
        max_lin = max(max_lin, lin_err)
    return LinearizationReport(scale, max_res, max_ratio, max_lin, tuple(residuals))


EXPERIMENT_KINDS = ("ell_sweep", "anneal", "spectrum")


@dataclass(frozen=True)
class ExperimentSpec:
    """Description of a batch of paired runs sharing seeds.

    ``ell_sweep`` solves at ``epsilon`` for every ``ell`` in ``ells`` with a
    basis computed at ``basis_from`` (or the exact basis at ``epsilon`` when
    ``basis_from`` is None). ``anneal`` runs the schedule ``epsilons`` once per
    warm mode. ``spectrum`` records the top ``k`` modes at each of ``epsilons``.
    """

    kind: str
    family: str = "gauss2d"
    n: Optional[int] = None
    m: Optional[int] = None
    seeds: tuple[int, ...] = (0,)
    epsilon: float = 0.05
    basis_from: Optional[float] = None
    ells: tuple[int, ...] = (0, 2, 4, 8)
    epsilons: tuple[float, ...] = ()
    warm_modes: tuple[str, ...] = ("none", "potentials", "spectral")
    ell: int = 8
    refresh_basis: bool = False
    k: int = 10
    tol: float = 1e-9
    max_iter: int = 100_000

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"kind must be one of {EXPERIMENT_KINDS}, got {self.kind!r}")
        if self.family not in SYNTHETIC_FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        for name in ("seeds", "ells", "epsilons", "warm_modes"):
            object.__setattr__(self, name, tuple(getattr(self, name)))


@dataclass
class ExperimentResult:
    traces: list[dict] = field(default_factory=list)
    summary: list[dict] = field(default_factory=list)
    spectrum: list[dict] = field(default_factory=list)
    timings: list[dict] = field(default_factory=list)

    def extend(self, other: "ExperimentResult") -> None:
        self.traces += other.traces
        self.summary += other.summary
        self.spectrum += other.spectrum
        self.timings += other.timings


def _tail_rate(errors: Sequence[float]) -> float:
    from .solver import estimate_contraction

    try:
        return estimate_contraction([e for e in errors if e > 0])
    except ValueError:
        return float("nan")


def _trace_rows(seed: int, config: str, result, **extra) -> list[dict]:
    return [dict(seed=seed, config=config, **extra, iteration=r.index,
                 marginal_error=r.marginal_error, semi_dual_value=r.semi_dual_value,
                 newton_accepted=int(r.newton_accepted))
            for r in result.trace]


def _run_ell_sweep(spec: ExperimentSpec, seed: int) -> ExperimentResult:
    from .solver import SolverConfig, build_basis, solve
    from .spectral import dense_modes

    out = ExperimentResult()
    if not spec.ells:
        return out
    problem = synthetic_problem(spec.family, seed, spec.epsilon, spec.n, spec.m)
    ell_max = max(spec.ells)
    basis = None
    if ell_max > 0:
        if spec.basis_from is None:
            oracle = oracle_solve(problem)
            basis = dense_modes(build_operator(problem, oracle.potentials), ell_max)
        else:
            coarse = problem.with_epsilon(spec.basis_from)
            warm = solve(coarse, SolverConfig(spec.tol, spec.max_iter, trace_enabled=False))
            basis = build_basis(coarse, warm.potentials, ell_max)
    for ell in spec.ells:
        config = f"ell={ell}"
        res = solve(problem, SolverConfig(spec.tol, spec.max_iter, ell),
                    basis=basis.truncated(ell) if ell else None)
        out.traces += _trace_rows(seed, config, res)
        out.summary.append(dict(seed=seed, config=config, ell=ell, iterations=res.iterations,
                                converged=int(res.converged),
                                tail_rate=_tail_rate([r.marginal_error for r in res.trace])))
        out.timings.append(dict(seed=seed, config=config,
                                seconds=sum(r.wall_time for r in res.trace)))
    return out


def _run_anneal(spec: ExperimentSpec, seed: int) -> ExperimentResult:
    from .solver import AnnealSchedule, SolverConfig, anneal

    out = ExperimentResult()
    if not spec.epsilons:
        return out
    problem = synthetic_problem(spec.family, seed, spec.epsilons[0], spec.n, spec.m)
    for mode in spec.warm_modes:
        schedule = AnnealSchedule(spec.epsilons, mode, spec.refresh_basis)
        stages = anneal(problem, schedule, SolverConfig(spec.tol, spec.max_iter, spec.ell))
        config = f"warm={mode}"
        for stage, (eps, res) in enumerate(zip(spec.epsilons, stages)):
            out.traces += _trace_rows(seed, config, res, stage=stage, epsilon=eps)
            out.timings.append(dict(seed=seed, config=config, stage=stage,
                                    seconds=sum(r.wall_time for r in res.trace)))
        out.summary.append(dict(seed=seed, config=config,
                                iterations=sum(r.iterations for r in stages),
                                converged=int(all(r.converged for r in stages))))
    return out


def _run_spectrum(spec: ExperimentSpec, seed: int) -> ExperimentResult:
    from .spectral import projector_distance, top_modes

    out = ExperimentResult()
    prev = None
    for eps in spec.epsilons:
        problem = synthetic_problem(spec.family, seed, eps, spec.n, spec.m)
        oracle = oracle_solve(problem)
        basis = top_modes(build_operator(problem, oracle.potentials), spec.k)
        for mode, rho in enumerate(basis.rhos, start=1):
            out.spectrum.append(dict(seed=seed, epsilon=eps, mode=mode, rho=float(rho),
                                     id_plus_k_eig=float(1.0 - rho),
                                     hessian_eig_low=float((1.0 - rho) / eps)))
        if prev is not None:
            out.summary.append(dict(seed=seed, config=f"eps={prev[0]}->{eps}",
                                    projector_distance=projector_distance(prev[1], basis)))
        prev = (eps, basis)
    return out


_RUNNERS = {"ell_sweep": _run_ell_sweep, "anneal": _run_anneal, "spectrum": _run_spectrum}


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> ExperimentResult:
    """Run every configuration of ``spec`` for every seed.

    Seeds may be spread over ``workers`` threads; rows are always returned
    in seed order, so the output does not depend on ``workers``.
    """
    runner = _RUNNERS[spec.kind]
    if workers > 1 and len(spec.seeds) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda s: runner(spec, s), spec.seeds))
    else:
        parts = [runner(spec, s) for s in spec.seeds]
    result = ExperimentResult()
    for part in parts:
        result.extend(part)
    return result
