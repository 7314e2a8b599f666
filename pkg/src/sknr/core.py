"""Problem representation and log-domain kernels for discrete entropic OT.

Everything here is a pure function of its inputs. Kernels of the form
``exp((f_i + g_j - C_ij) / eps)`` are never materialised ahead of time;
they are evaluated per use after a max-shift, which keeps the arithmetic
finite for very small ``eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

WEIGHT_SUM_TOL = 1e-12


def _as_vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{name}: empty vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Probability weights over a finite support.

    Zero-mass points are rejected rather than dropped so that indices stay
    aligned with the rows/columns of the cost matrix.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = _as_vector(self.weights, "weights")
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive (remove zero-mass points)")
        total = math.fsum(w)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {total!r}, expected 1")
        object.__setattr__(self, "weights", w)
        log_w = np.log(w)
        log_w.setflags(write=False)
        object.__setattr__(self, "_log_weights", log_w)

    @classmethod
    def uniform(cls, n: int) -> "DiscreteMeasure":
        if n < 1:
            raise ValueError("uniform measure needs at least one point")
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def normalized(cls, weights) -> "DiscreteMeasure":
        w = np.asarray(weights, dtype=float).reshape(-1)
        return cls(w / math.fsum(w))

    @property
    def log_weights(self) -> np.ndarray:
        return self._log_weights

    def __len__(self) -> int:
        return self.weights.size


@dataclass(frozen=True, eq=False)
class CostMatrix:
    entries: np.ndarray

    def __post_init__(self):
        c = np.array(self.entries, dtype=float)
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise ValueError(f"cost must be a non-empty 2-D matrix, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("cost has non-finite entries")
        c.setflags(write=False)
        object.__setattr__(self, "entries", c)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def m(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True, eq=False)
class EotProblem:
    cost: CostMatrix
    alpha: DiscreteMeasure
    beta: DiscreteMeasure
    epsilon: float

    def __post_init__(self):
        if not isinstance(self.cost, CostMatrix):
            object.__setattr__(self, "cost", CostMatrix(self.cost))
        for name in ("alpha", "beta"):
            if not isinstance(getattr(self, name), DiscreteMeasure):
                object.__setattr__(self, name, DiscreteMeasure(getattr(self, name)))
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive and finite, got {self.epsilon!r}")
        object.__setattr__(self, "epsilon", float(self.epsilon))
        if len(self.alpha) != self.cost.n or len(self.beta) != self.cost.m:
            raise ValueError(
                f"measure sizes ({len(self.alpha)}, {len(self.beta)}) do not match "
                f"cost shape {self.cost.entries.shape}"
            )

    @classmethod
    def from_arrays(cls, cost, alpha=None, beta=None, epsilon: float = 1.0) -> "EotProblem":
        """Build a problem from raw arrays; missing weights default to uniform."""
        cost = CostMatrix(cost)
        a = DiscreteMeasure.uniform(cost.n) if alpha is None else DiscreteMeasure(alpha)
        b = DiscreteMeasure.uniform(cost.m) if beta is None else DiscreteMeasure(beta)
        return cls(cost, a, b, epsilon)

    def with_epsilon(self, epsilon: float) -> "EotProblem":
        return EotProblem(self.cost, self.alpha, self.beta, epsilon)

    @property
    def C(self) -> np.ndarray:
        return self.cost.entries

    @property
    def shape(self) -> tuple[int, int]:
        return self.cost.entries.shape


@dataclass(frozen=True, eq=False)
class Potentials:
    """Dual pair (f, g), meaningful only up to (f + c, g - c)."""

    f: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "f", _as_vector(self.f, "f"))
        object.__setattr__(self, "g", _as_vector(self.g, "g"))

    @classmethod
    def zeros(cls, problem: EotProblem) -> "Potentials":
        n, m = problem.shape
        return cls(np.zeros(n), np.zeros(m))

    def normalized(self, alpha: DiscreteMeasure) -> "Potentials":
        """Shift so that f has zero mean under alpha; the shift goes into g."""
        c = float(alpha.weights @ self.f)
        return Potentials(self.f - c, self.g + c)

    def distance(self, other: "Potentials", alpha: DiscreteMeasure) -> float:
        """Max-norm distance between gauge-normalised pairs."""
        a, b = self.normalized(alpha), other.normalized(alpha)
        return float(max(np.max(np.abs(a.f - b.f)), np.max(np.abs(a.g - b.g))))


@dataclass(frozen=True, eq=False)
class Coupling:
    plan: np.ndarray

    def __post_init__(self):
        p = np.array(self.plan, dtype=float)
        if p.ndim != 2:
            raise ValueError("plan must be a matrix")
        if np.any(p < 0):
            raise ValueError("plan has negative entries")
        object.__setattr__(self, "plan", p)

    def total_mass(self) -> float:
        return math.fsum(self.plan.ravel())


def log_sum_exp(values: Sequence[float], log_weights: Sequence[float]) -> float:
    """Return ``log(sum(exp(values + log_weights)))`` with a max-shift."""
    z = np.asarray(values, dtype=float).reshape(-1) + np.asarray(log_weights, dtype=float).reshape(-1)
    if z.size == 0:
        raise ValueError("empty reduction")
    top = float(np.max(z))
    if not math.isfinite(top):
        return top
    return top + math.log(math.fsum(np.exp(z - top)))


def _lse_columns(z: np.ndarray, keep_weights: bool = False):
    """Column-wise log-sum-exp of an n×m array (reduction over rows).

    With ``keep_weights`` the column-normalised softmax weights are returned
    as well; they sum to one down each column.
    """
    top = z.max(axis=0)
    e = np.exp(z - top)
    s = e.sum(axis=0)
    out = top + np.log(s)
    if keep_weights:
        e /= s
        return out, e
    return out


def _ctransform_f(problem: EotProblem, f: np.ndarray, keep_weights: bool = False):
    eps = problem.epsilon
    z = (f[:, None] - problem.C) / eps
    z += problem.alpha.log_weights[:, None]
    if keep_weights:
        lse, w = _lse_columns(z, keep_weights=True)
        return -eps * lse, w
    return -eps * _lse_columns(z)


def ctransform_of_f(problem: EotProblem, f) -> np.ndarray:
    """Soft c-transform of a source potential: the optimal partner g.

    ``g_j = -eps * log sum_i alpha_i exp((f_i - C_ij) / eps)``.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (problem.shape[0],):
        raise ValueError(f"f has shape {f.shape}, expected ({problem.shape[0]},)")
    return _ctransform_f(problem, f)


def ctransform_of_g(problem: EotProblem, g) -> np.ndarray:
    """Mirror of :func:`ctransform_of_f`: returns the optimal partner f of g."""
    g = np.asarray(g, dtype=float)
    if g.shape != (problem.shape[1],):
        raise ValueError(f"g has shape {g.shape}, expected ({problem.shape[1]},)")
    eps = problem.epsilon
    z = (g[:, None] - problem.C.T) / eps
    z += problem.beta.log_weights[:, None]
    return -eps * _lse_columns(z)


def _log_kernel(problem: EotProblem, f: np.ndarray, g: np.ndarray) -> np.ndarray:
    return (f[:, None] + g[None, :] - problem.C) / problem.epsilon


def coupling_from(problem: EotProblem, pots: Potentials) -> Coupling:
    """Transport plan ``alpha_i beta_j exp((f_i + g_j - C_ij) / eps)``."""
    kernel = np.exp(_log_kernel(problem, pots.f, pots.g))
    return Coupling(problem.alpha.weights[:, None] * kernel * problem.beta.weights[None, :])


def marginal_residuals(problem: EotProblem, plan: Coupling) -> tuple[np.ndarray, np.ndarray]:
    p = plan.plan if isinstance(plan, Coupling) else np.asarray(plan)
    if p.shape != problem.shape:
        raise ValueError(f"plan shape {p.shape} does not match problem {problem.shape}")
    return p.sum(axis=1) - problem.alpha.weights, p.sum(axis=0) - problem.beta.weights


def marginal_error(problem: EotProblem, plan: Coupling) -> float:
    """``||pi 1 - alpha||_2 + ||pi^T 1 - beta||_2``."""
    row, col = marginal_residuals(problem, plan)
    return float(np.linalg.norm(row) + np.linalg.norm(col))


def marginal_error_inf(problem: EotProblem, plan: Coupling) -> float:
    row, col = marginal_residuals(problem, plan)
    return float(np.max(np.abs(row)) + np.max(np.abs(col)))


def osc_norm(v) -> float:
    """Oscillation semi-norm ``max(v) - min(v)``."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size == 0:
        raise ValueError("osc_norm of an empty vector")
    return float(v.max() - v.min())
