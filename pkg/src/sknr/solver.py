"""Sinkhorn-Knopp with optional Newton-Raphson correction on a low-dimensional subspace.

One iteration of :func:`solve`:

1. ``g <- f^{C,eps}`` then ``f <- g^{C,eps}`` (a log-domain SK sweep),
2. stop if the marginal error is below ``tol_omega``,
3. if a basis ``V`` is supplied, take a Newton step on the semi-dual
   restricted to ``span(V)``; keep it only if the semi-dual value increases.

The transform ``f^{C,eps}`` evaluated in step 2 is reused as the next
sweep's ``g``, so the Newton correction costs one extra transform per
iteration plus an ``n × m × ell`` product.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .core import (
    Coupling,
    EotProblem,
    Potentials,
    _ctransform_f,
    coupling_from,
    ctransform_of_f,
    ctransform_of_g,
)
from .objective import _basis_matrix, _restricted_from_weights, conditional_weights
from .spectral import DEFAULT_TOL, EigensolverError, SpectralBasis, build_operator, top_modes

log = logging.getLogger(__name__)

WARM_MODES = ("none", "potentials", "spectral")


@dataclass(frozen=True)
class SolverConfig:
    tol_omega: float = 1e-9
    max_iter: int = 100_000
    ell: int = 0
    trace_enabled: bool = True

    def __post_init__(self):
        if not self.tol_omega > 0:
            raise ValueError("tol_omega must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.ell < 0:
            raise ValueError("ell must be nonnegative")

    @property
    def newton_enabled(self) -> bool:
        return self.ell > 0


@dataclass(frozen=True)
class IterationRecord:
    index: int
    marginal_error: float
    marginal_error_inf: float
    semi_dual_value: float
    newton_attempted: bool
    newton_accepted: bool
    wall_time: float
    rejection_streak: int = 0


@dataclass(frozen=True, eq=False)
class SolveResult:
    potentials: Potentials
    coupling: Coupling
    converged: bool
    iterations: int
    trace: list[IterationRecord] = field(default_factory=list)

    @property
    def newton_accepted(self) -> int:
        return sum(r.newton_accepted for r in self.trace)


@dataclass(frozen=True)
class AnnealSchedule:
    epsilons: tuple[float, ...]
    warm_mode: str = "potentials"
    refresh_basis: bool = False

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if not eps:
            raise ValueError("schedule is empty")
        if any(e <= 0 for e in eps):
            raise ValueError("epsilons must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        if self.warm_mode not in WARM_MODES:
            raise ValueError(f"warm_mode must be one of {WARM_MODES}, got {self.warm_mode!r}")
        object.__setattr__(self, "epsilons", eps)


def sk_sweep(problem: EotProblem, pots: Potentials) -> Potentials:
    """One Sinkhorn-Knopp sweep: g from f, then f from the new g."""
    g = ctransform_of_f(problem, pots.f)
    f = ctransform_of_g(problem, g)
    return Potentials(f, g)


def _newton_candidate(problem: EotProblem, f: np.ndarray, P: np.ndarray, V: np.ndarray):
    """Newton increment on span(V), or ``None`` if the restricted Hessian is not negative definite."""
    d = _restricted_from_weights(problem, P, V)
    try:
        factor = scipy.linalg.cho_factor(-d.hess)
    except np.linalg.LinAlgError:
        log.debug("restricted Hessian not negative definite; Newton step rejected")
        return None
    coords = scipy.linalg.cho_solve(factor, d.grad)
    return f + V @ coords


def newton_step(problem: EotProblem, f, basis) -> tuple[np.ndarray, bool]:
    """Newton-Raphson step on the semi-dual restricted to the span of ``basis``.

    Returns ``(f', True)`` if the semi-dual value strictly increases, else
    ``(f, False)``. No line search is performed.
    """
    f = np.asarray(f, dtype=float)
    V = _basis_matrix(basis, problem.shape[0])
    g, P = conditional_weights(problem, f)
    value = float(problem.alpha.weights @ f + problem.beta.weights @ g)
    cand = _newton_candidate(problem, f, P, V)
    if cand is None:
        return f, False
    new_value = float(problem.alpha.weights @ cand + problem.beta.weights @ _ctransform_f(problem, cand))
    if new_value > value:
        return cand, True
    return f, False


def solve(problem: EotProblem, config: SolverConfig = SolverConfig(),
          basis: Optional[SpectralBasis] = None, init: Optional[Potentials] = None,
          callback: Optional[Callable[[int, np.ndarray], None]] = None) -> SolveResult:
    """Run SK (``config.ell == 0``) or SK-NR(ell) until the marginal error drops below ``tol_omega``.

    Args:
        problem: the EOT instance.
        config: tolerances, iteration budget and subspace dimension.
        basis: required when ``config.ell > 0``; only its first ``ell`` columns are used.
        init: starting potentials, zeros by default. Only ``init.f`` matters.
        callback: called as ``callback(k, f_k)`` at the end of every iteration.

    Returns:
        A :class:`SolveResult`; hitting ``max_iter`` gives ``converged=False``.
    """
    n, m = problem.shape
    alpha, beta = problem.alpha.weights, problem.beta.weights
    eps = problem.epsilon
    V = None
    if config.ell > 0:
        if basis is None:
            raise ValueError(f"ell={config.ell} requires a spectral basis")
        V = _basis_matrix(basis, n)
        if V.shape[1] < config.ell:
            raise ValueError(f"basis has {V.shape[1]} columns, ell={config.ell} requested")
        V = V[:, : config.ell]

    f = np.zeros(n) if init is None else np.array(init.f, dtype=float)
    if f.shape != (n,):
        raise ValueError("init potentials do not match the problem")
    g = np.zeros(m)
    f_transform = None  # cached f^{C,eps} for the current f
    trace: list[IterationRecord] = []
    converged = False
    streak = 0
    k = 0
    for k in range(1, config.max_iter + 1):
        t0 = time.perf_counter()
        g = f_transform if f_transform is not None else _ctransform_f(problem, f)
        f = ctransform_of_g(problem, g)
        shift = float(alpha @ f)
        f -= shift
        g = g + shift

        if V is not None:
            f_transform, P = _ctransform_f(problem, f, keep_weights=True)
        else:
            f_transform = _ctransform_f(problem, f)
        # f = g^{C,eps} makes the row marginal exact; the column marginal is
        # beta_j exp((g_j - f^{C,eps}_j) / eps)
        col = beta * np.expm1((g - f_transform) / eps)
        err = float(np.linalg.norm(col))
        err_inf = float(np.max(np.abs(col)))
        value = float(alpha @ f + beta @ f_transform)

        attempted = accepted = False
        if err < config.tol_omega:
            converged = True
        elif V is not None:
            attempted = True
            cand = _newton_candidate(problem, f, P, V)
            if cand is not None:
                cand_transform = _ctransform_f(problem, cand)
                cand_value = float(alpha @ cand + beta @ cand_transform)
                if cand_value > value:
                    accepted = True
                    f, f_transform, value = cand, cand_transform, cand_value
            streak = 0 if accepted else streak + 1

        if config.trace_enabled:
            trace.append(IterationRecord(k, err, err_inf, value, attempted, accepted,
                                         time.perf_counter() - t0, streak))
        if callback is not None:
            callback(k, f)
        if converged:
            break

    pots = Potentials(f, g)
    return SolveResult(pots, coupling_from(problem, pots), converged, k, trace)


def build_basis(problem: EotProblem, pots: Potentials, ell: int, tol: float = DEFAULT_TOL,
                max_power_iters: Optional[int] = None) -> SpectralBasis:
    return top_modes(build_operator(problem, pots), ell, tol=tol, max_power_iters=max_power_iters)


def anneal(problem: EotProblem, schedule: AnnealSchedule, config: SolverConfig = SolverConfig(),
           basis_tol: float = DEFAULT_TOL, max_power_iters: Optional[int] = None) -> list[SolveResult]:
    """Solve along a decreasing sequence of regularisations.

    ``problem`` supplies cost and marginals; its own epsilon is ignored.
    Stage 0 is plain SK. Later stages start from zero (``none``), from the
    previous stage's potentials (``potentials``), or from those potentials
    plus a basis computed at the previous stage's solution (``spectral``).
    Without ``refresh_basis`` the spectral basis is computed once, from the
    first stage, and reused.
    """
    if schedule.warm_mode == "spectral" and config.ell < 1:
        raise ValueError("spectral warm start needs config.ell >= 1")
    plain = SolverConfig(config.tol_omega, config.max_iter, 0, config.trace_enabled)
    results: list[SolveResult] = []
    basis = None
    for stage, eps in enumerate(schedule.epsilons):
        stage_problem = problem.with_epsilon(eps)
        if stage == 0:
            results.append(solve(stage_problem, plain))
            continue
        prev = results[-1]
        if schedule.warm_mode == "none":
            results.append(solve(stage_problem, plain))
        elif schedule.warm_mode == "potentials":
            results.append(solve(stage_problem, plain, init=prev.potentials))
        else:
            if basis is None or schedule.refresh_basis:
                prev_problem = problem.with_epsilon(schedule.epsilons[stage - 1])
                try:
                    basis = build_basis(prev_problem, prev.potentials, config.ell, basis_tol, max_power_iters)
                except EigensolverError as exc:
                    raise EigensolverError(f"stage {stage}: {exc}", exc.residual) from exc
            results.append(solve(stage_problem, config, basis=basis, init=prev.potentials))
    return results


def estimate_contraction(errors: Sequence[float]) -> float:
    """Geometric-mean ratio of successive errors over the last third of ``errors``."""
    e = np.asarray(errors, dtype=float).reshape(-1)
    tail = e[e.size - e.size // 3:]
    if tail.size < 5:
        raise ValueError(f"insufficient data: {tail.size} tail entries, need at least 5")
    if np.any(tail <= 0) or not np.all(np.isfinite(tail)):
        raise ValueError("errors must be positive and finite")
    return float(math.exp((math.log(tail[-1]) - math.log(tail[0])) / (tail.size - 1)))


def predicted_iterations(omega: float, rho: float) -> int:
    """``ceil(log(omega) / (2 log(rho)))``, the asymptotic iteration count for rate ``rho^2``."""
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    return int(math.ceil(math.log(omega) / (2.0 * math.log(rho))))
