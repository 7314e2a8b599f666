"""Dual and semi-dual objectives with first and second derivatives.

The semi-dual ``Q(f) = <f, alpha> + <f^{C,eps}, beta>`` is concave in f and
flat along constants. Its Hessian quadratic form is minus the
beta-average of column-conditional variances, scaled by ``1/eps``.

Gradients are returned in plain Euclidean coordinates: entry ``i`` is the
directional derivative along the i-th unit vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import EotProblem, Potentials, _ctransform_f, _log_kernel

DENSE_HESSIAN_LIMIT = 2000


@dataclass(frozen=True, eq=False)
class RestrictedDerivatives:
    """Semi-dual gradient and Hessian expressed in the coordinates of a basis."""

    grad: np.ndarray
    hess: np.ndarray


def _basis_matrix(basis, n: int) -> np.ndarray:
    V = np.asarray(getattr(basis, "vectors", basis), dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] != n:
        raise ValueError(f"basis dimension {V.shape[0]} does not match n={n}")
    if V.shape[1] < 1:
        raise ValueError("basis must have at least one column")
    return V


def _check_f(problem: EotProblem, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (problem.shape[0],):
        raise ValueError(f"f has shape {f.shape}, expected ({problem.shape[0]},)")
    return f


def dual_value(problem: EotProblem, pots: Potentials) -> float:
    a, b = problem.alpha, problem.beta
    z = _log_kernel(problem, pots.f, pots.g)
    z += a.log_weights[:, None]
    z += b.log_weights[None, :]
    mass = np.exp(logsumexp(z))
    return float(a.weights @ pots.f + b.weights @ pots.g - problem.epsilon * (mass - 1.0))


def semi_dual_value(problem: EotProblem, f) -> float:
    f = _check_f(problem, f)
    g = _ctransform_f(problem, f)
    return float(problem.alpha.weights @ f + problem.beta.weights @ g)


def conditional_weights(problem: EotProblem, f) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(f^{C,eps}, P)`` with ``P[i, j] = alpha_i exp((f_i + g_j - C_ij)/eps)``.

    Each column of ``P`` is a probability vector over the source points.
    """
    return _ctransform_f(problem, _check_f(problem, f), keep_weights=True)


def _gradient_from_weights(problem: EotProblem, P: np.ndarray) -> np.ndarray:
    return problem.alpha.weights - P @ problem.beta.weights


def semi_dual_gradient(problem: EotProblem, f) -> np.ndarray:
    """alpha minus the row marginal of the coupling built from (f, f^{C,eps})."""
    _, P = conditional_weights(problem, f)
    return _gradient_from_weights(problem, P)


def semi_dual_hessian_quadform(problem: EotProblem, f, u) -> float:
    _, P = conditional_weights(problem, f)
    u = np.asarray(u, dtype=float)
    mean = u @ P
    # centred form keeps constants at exactly zero variance
    var = np.einsum("ij,ij->j", P, (u[:, None] - mean[None, :]) ** 2)
    return float(-(problem.beta.weights @ var) / problem.epsilon)


def _restricted_from_weights(problem: EotProblem, P: np.ndarray, V: np.ndarray) -> RestrictedDerivatives:
    beta = problem.beta.weights
    row = P @ beta
    grad = V.T @ (problem.alpha.weights - row)
    W = P.T @ V  # per-column conditional means, m x ell
    first = V.T @ (row[:, None] * V)
    second = W.T @ (beta[:, None] * W)
    hess = -(first - second) / problem.epsilon
    hess = 0.5 * (hess + hess.T)
    return RestrictedDerivatives(grad=grad, hess=hess)


def restricted_derivatives(problem: EotProblem, f, basis) -> RestrictedDerivatives:
    """Gradient ``V^T grad Q`` and Hessian ``V^T H V`` for a basis ``V`` (n × ell).

    ``basis`` may be a :class:`~sknr.spectral.SpectralBasis` or a raw array.
    """
    V = _basis_matrix(basis, problem.shape[0])
    _, P = conditional_weights(problem, f)
    return _restricted_from_weights(problem, P, V)


def full_semi_dual_hessian(problem: EotProblem, f, dense_limit: int = DENSE_HESSIAN_LIMIT) -> np.ndarray:
    n = problem.shape[0]
    if n > dense_limit:
        raise ValueError(f"dense Hessian too large (n={n} > {dense_limit})")
    _, P = conditional_weights(problem, f)
    beta = problem.beta.weights
    H = np.diag(P @ beta) - (P * beta[None, :]) @ P.T
    H = -0.5 * (H + H.T) / problem.epsilon
    return H
