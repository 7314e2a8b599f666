"""Linearised Sinkhorn operator and its dominant modes.

At potentials (f, g) let ``M_ij = exp((f_i + g_j - C_ij) / eps)``. The
block operator ``K = [[0, R], [R^T, 0]]`` acts on ``f1 ⊕ g1`` through

    (R g1)_i   = sum_j M_ij beta_j g1_j
    (R^T f1)_j = sum_i M_ij alpha_i f1_i

Eigenproblems are solved on the symmetrised block
``S = diag(sqrt(alpha)) M diag(sqrt(beta))``, which is similar to the plain
one and has the same singular values. A vector ``u`` in potential
coordinates corresponds to ``sqrt(alpha) * u`` in symmetrised coordinates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import EotProblem, Potentials, _log_kernel

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
OVERSAMPLE = 5


class EigensolverError(RuntimeError):
    """Subspace iteration did not reach the residual tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (best residual {residual:.3e})")
        self.residual = residual


class SinkhornOperator:
    """The linearisation operator anchored at a given pair of potentials.

    The kernel at the anchor is evaluated once and kept; it has the same
    footprint as the cost matrix.
    """

    def __init__(self, problem: EotProblem, pots: Potentials):
        n, m = problem.shape
        if pots.f.shape != (n,) or pots.g.shape != (m,):
            raise ValueError("potentials do not match the problem dimensions")
        self.problem = problem
        self.f = pots.f
        self.g = pots.g
        self._kernel: Optional[np.ndarray] = None
        self.sqrt_alpha = np.sqrt(problem.alpha.weights)
        self.sqrt_beta = np.sqrt(problem.beta.weights)

    @property
    def kernel(self) -> np.ndarray:
        if self._kernel is None:
            self._kernel = np.exp(_log_kernel(self.problem, self.f, self.g))
        return self._kernel

    @property
    def shape(self) -> tuple[int, int]:
        return self.problem.shape

    def apply_R(self, g1) -> np.ndarray:
        return self.kernel @ (self.problem.beta.weights * np.asarray(g1, dtype=float))

    def apply_Rt(self, f1) -> np.ndarray:
        return self.kernel.T @ (self.problem.alpha.weights * np.asarray(f1, dtype=float))

    def apply_K(self, f1, g1) -> tuple[np.ndarray, np.ndarray]:
        return self.apply_R(g1), self.apply_Rt(f1)

    def apply_sym(self, v) -> np.ndarray:
        """Symmetrised block applied on the right: ``S v`` (accepts n×k blocks too)."""
        v = np.asarray(v, dtype=float)
        sb = self.sqrt_beta if v.ndim == 1 else self.sqrt_beta[:, None]
        sa = self.sqrt_alpha if v.ndim == 1 else self.sqrt_alpha[:, None]
        return sa * (self.kernel @ (sb * v))

    def apply_sym_t(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        sb = self.sqrt_beta if u.ndim == 1 else self.sqrt_beta[:, None]
        sa = self.sqrt_alpha if u.ndim == 1 else self.sqrt_alpha[:, None]
        return sb * (self.kernel.T @ (sa * u))

    def dense_R(self) -> np.ndarray:
        return self.kernel * self.problem.beta.weights[None, :]

    def dense_Rt(self) -> np.ndarray:
        return self.kernel.T * self.problem.alpha.weights[None, :]

    def dense_sym(self) -> np.ndarray:
        return self.sqrt_alpha[:, None] * self.kernel * self.sqrt_beta[None, :]

    def dense_K(self, symmetric: bool = False) -> np.ndarray:
        """Full (n+m)×(n+m) block matrix; ``symmetric`` gives the Hermitisation of S."""
        n, m = self.shape
        K = np.zeros((n + m, n + m))
        if symmetric:
            S = self.dense_sym()
            K[:n, n:] = S
            K[n:, :n] = S.T
        else:
            K[:n, n:] = self.dense_R()
            K[n:, :n] = self.dense_Rt()
        return K


def build_operator(problem: EotProblem, pots: Potentials) -> SinkhornOperator:
    return SinkhornOperator(problem, pots)


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Low-frequency directions for the Newton step.

    ``vectors`` lives in potential coordinates; ``sym_vectors`` holds the same
    columns multiplied by ``sqrt(alpha)`` and is orthonormal.
    """

    vectors: np.ndarray
    sym_vectors: np.ndarray
    rhos: np.ndarray
    epsilon_built_at: float
    residuals: Optional[np.ndarray] = None
    right_vectors: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def ell(self) -> int:
        return self.vectors.shape[1]

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    def truncated(self, ell: int) -> "SpectralBasis":
        if not 1 <= ell <= self.ell:
            raise ValueError(f"cannot truncate a {self.ell}-column basis to {ell}")
        rv = None if self.right_vectors is None else self.right_vectors[:, :ell]
        res = None if self.residuals is None else self.residuals[:ell]
        return SpectralBasis(self.vectors[:, :ell], self.sym_vectors[:, :ell], self.rhos[:ell],
                             self.epsilon_built_at, res, rv)


def _basis_from_sym(op: SinkhornOperator, U: np.ndarray, rhos: np.ndarray,
                    residuals: Optional[np.ndarray]) -> SpectralBasis:
    # one more Gram-Schmidt pass against the Perron direction and each other
    q0 = op.sqrt_alpha / np.linalg.norm(op.sqrt_alpha)
    U = U - np.outer(q0, q0 @ U)
    U, r = np.linalg.qr(U)
    U = U * np.sign(np.diag(r))[None, :]
    V = U / op.sqrt_alpha[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        right = op.apply_sym_t(U) / np.where(rhos > 0, rhos, np.inf)[None, :]
    right = right / op.sqrt_beta[:, None]
    return SpectralBasis(V, U, np.asarray(rhos, dtype=float), op.problem.epsilon, residuals, right)


def top_modes(op: SinkhornOperator, ell: int, tol: float = DEFAULT_TOL,
              max_power_iters: Optional[int] = None, oversample: int = OVERSAMPLE,
              seed: int = 0, init: Optional[np.ndarray] = None) -> SpectralBasis:
    """Top ``ell`` non-trivial singular triplets of the symmetrised block.

    Block power iteration with Rayleigh-Ritz on ``S S^T`` restricted to the
    complement of ``sqrt(alpha)``. Converged when every returned pair has
    ``||S S^T v - rho^2 v|| <= tol``.

    Args:
        op: operator anchored at (near-)optimal potentials.
        ell: number of modes, ``1 <= ell <= n - 1``.
        tol: eigen-residual tolerance.
        max_power_iters: sweep budget, default ``500 * ell``.
        oversample: extra block columns to speed separation.
        seed: seed for the random starting block.
        init: optional starting block in symmetrised coordinates (n × k).

    Raises:
        ValueError: if ``ell`` is out of range.
        EigensolverError: if the budget is exhausted.
    """
    n = op.shape[0]
    if not 1 <= ell <= n - 1:
        raise ValueError(f"ell={ell} must satisfy 1 <= ell <= n-1 = {n - 1}")
    if max_power_iters is None:
        max_power_iters = 500 * ell
    k = min(ell + oversample, n - 1)
    q0 = op.sqrt_alpha / np.linalg.norm(op.sqrt_alpha)

    def deflate(X):
        return X - np.outer(q0, q0 @ X)

    def apply(X):
        return deflate(op.apply_sym(op.apply_sym_t(deflate(X))))

    rng = np.random.Generator(np.random.Philox(seed))
    X = rng.standard_normal((n, k))
    if init is not None:
        init = np.asarray(init, dtype=float).reshape(n, -1)[:, :k]
        X[:, : init.shape[1]] = init
    Q, _ = np.linalg.qr(deflate(X))
    AQ = apply(Q)
    best = np.inf
    for it in range(max_power_iters + 1):
        B = Q.T @ AQ
        theta, S = np.linalg.eigh(0.5 * (B + B.T))
        order = np.argsort(theta)[::-1]
        theta, S = theta[order], S[:, order]
        X = Q @ S
        AX = AQ @ S
        res = np.linalg.norm(AX[:, :ell] - X[:, :ell] * theta[None, :ell], axis=0)
        worst = float(res.max())
        best = min(best, worst)
        if worst <= tol:
            log.debug("top_modes converged after %d sweeps", it)
            rhos = np.sqrt(np.clip(theta[:ell], 0.0, None))
            return _basis_from_sym(op, X[:, :ell], rhos, res)
        if it == max_power_iters:
            break
        Q, _ = np.linalg.qr(AX)
        AQ = apply(Q)
    raise EigensolverError(f"subspace iteration did not converge in {max_power_iters} sweeps", best)


def dense_modes(op: SinkhornOperator, ell: int) -> SpectralBasis:
    """Exact modes from a dense SVD, for small problems and cross-checks."""
    n = op.shape[0]
    if not 1 <= ell <= n - 1:
        raise ValueError(f"ell={ell} must satisfy 1 <= ell <= n-1 = {n - 1}")
    q0 = op.sqrt_alpha / np.linalg.norm(op.sqrt_alpha)
    S = op.dense_sym()
    S = S - np.outer(q0, q0 @ S)
    U, s, _ = np.linalg.svd(S, full_matrices=False)
    U = U[:, :ell]
    res = np.linalg.norm(op.apply_sym(op.apply_sym_t(U)) - U * s[None, :ell] ** 2, axis=0)
    return _basis_from_sym(op, U, s[:ell], res)


def projector_distance(basis_a: SpectralBasis, basis_b: SpectralBasis) -> float:
    """Operator norm of the difference of the two orthogonal projectors."""
    A = np.asarray(getattr(basis_a, "sym_vectors", basis_a), dtype=float)
    B = np.asarray(getattr(basis_b, "sym_vectors", basis_b), dtype=float)
    if A.shape != B.shape:
        raise ValueError(f"basis shapes differ: {A.shape} vs {B.shape}")
    Qa, _ = np.linalg.qr(A)
    Qb, _ = np.linalg.qr(B)
    # ||(I - Pa) Qb|| is the sine of the largest principal angle
    resid = Qb - Qa @ (Qa.T @ Qb)
    return float(np.linalg.norm(resid, 2))


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    epsilon: float
    rhos: np.ndarray
    eigenvalues_of_K: np.ndarray
    hessian_eigenvalues: np.ndarray
    vectors_f: Optional[np.ndarray] = None
    vectors_g: Optional[np.ndarray] = None

    @property
    def k(self) -> int:
        return int(self.rhos.size)

    @property
    def hessian_eigs_low(self) -> np.ndarray:
        """``(1 - rho) / eps``: the small eigenvalues of ``-∇²Q`` for the dual pair."""
        return (1.0 - self.rhos) / self.epsilon

    @property
    def semi_dual_hessian_eigenvalues(self) -> np.ndarray:
        return -(1.0 - self.rhos ** 2) / self.epsilon

    def eigenvector(self, index: int, negative: bool = False) -> np.ndarray:
        """K-eigenvector ``u ⊕ v`` of ``+rho`` (or ``(-u) ⊕ v`` for ``-rho``)."""
        if self.vectors_f is None:
            raise ValueError("report was built without vectors")
        u = self.vectors_f[:, index]
        return np.concatenate([-u if negative else u, self.vectors_g[:, index]])

    def to_json_dict(self) -> dict:
        out = {
            "epsilon": float(self.epsilon),
            "k": self.k,
            "rho": [float(r) for r in self.rhos],
            "hessian_eigs_low": [float(h) for h in self.hessian_eigs_low],
        }
        if self.vectors_f is not None:
            out["vectors_f"] = self.vectors_f.T.tolist()
            out["vectors_g"] = self.vectors_g.T.tolist()
        return out


def spectrum_report(problem: EotProblem, pots: Potentials, k: int, include_vectors: bool = False,
                    tol: float = DEFAULT_TOL, max_power_iters: Optional[int] = None,
                    dense: bool = False) -> SpectrumReport:
    """Top ``k`` values of rho mirrored into ``±rho`` pairs, plus Hessian eigenvalues.

    The ``-rho`` eigenvector is obtained from the ``+rho`` one by negating
    the f-block.
    """
    n, m = problem.shape
    if not 1 <= k <= min(n, m) - 1:
        raise ValueError(f"k={k} must satisfy 1 <= k <= min(n, m) - 1 = {min(n, m) - 1}")
    op = build_operator(problem, pots)
    basis = dense_modes(op, k) if dense else top_modes(op, k, tol=tol, max_power_iters=max_power_iters)
    rhos = basis.rhos
    eig_K = np.concatenate([rhos, -rhos[::-1]])
    hess = np.sort(np.concatenate([(1.0 - rhos) / problem.epsilon, (1.0 + rhos) / problem.epsilon]))
    vf = vg = None
    if include_vectors:
        vf, vg = basis.vectors, basis.right_vectors
    return SpectrumReport(problem.epsilon, rhos, eig_K, hess, vf, vg)
