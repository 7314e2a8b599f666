import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sknr import (
    EotProblem,
    Potentials,
    build_operator,
    dense_modes,
    dual_value,
    full_semi_dual_hessian,
    restricted_derivatives,
    semi_dual_gradient,
    semi_dual_hessian_quadform,
    semi_dual_value,
)
from sknr.harness import oracle_solve

from conftest import random_problem

TWO_BY_TWO = EotProblem.from_arrays([[0.0, 1.0], [2.0, 0.5]], [0.3, 0.7], [0.6, 0.4], 0.5)


@pytest.fixture(scope="module")
def solved_6x8():
    p = random_problem(np.random.default_rng(7), 6, 8, 0.3)
    return p, oracle_solve(p)


def fd_gradient(p, f, h=1e-5):
    out = np.empty_like(f)
    for i in range(f.size):
        e = np.zeros_like(f)
        e[i] = h
        out[i] = (semi_dual_value(p, f + e) - semi_dual_value(p, f - e)) / (2 * h)
    return out


# --- dual value ------------------------------------------------------------------

def test_dual_value_zero_cost():
    p = EotProblem.from_arrays(np.zeros((3, 2)), epsilon=0.4)
    assert dual_value(p, Potentials.zeros(p)) == pytest.approx(0.0, abs=1e-15)


@given(st.floats(-5, 5))
def test_dual_value_gauge(c):
    p = random_problem(np.random.default_rng(1), 3, 4, 0.7)
    f, g = np.array([0.1, -0.4, 0.3]), np.array([0.0, 0.2, -0.1, 0.5])
    assert dual_value(p, Potentials(f + c, g - c)) == pytest.approx(dual_value(p, Potentials(f, g)), abs=1e-11)


def test_dual_equals_semi_dual_at_optimum():
    o = oracle_solve(TWO_BY_TWO)
    assert dual_value(TWO_BY_TWO, o.potentials) == pytest.approx(
        semi_dual_value(TWO_BY_TWO, o.potentials.f), abs=1e-12)


# --- semi-dual value -------------------------------------------------------------

def test_semi_dual_zero_cost(rng):
    a = rng.uniform(1, 2, 3)
    b = rng.uniform(1, 2, 5)
    p = EotProblem.from_arrays(np.zeros((3, 5)), a / a.sum(), b / b.sum(), 0.2)
    assert semi_dual_value(p, np.zeros(3)) == pytest.approx(0.0, abs=1e-15)


@given(st.floats(-10, 10))
def test_semi_dual_shift_invariant(c):
    f = np.array([0.3, -1.0])
    assert semi_dual_value(TWO_BY_TWO, f + c) == pytest.approx(semi_dual_value(TWO_BY_TWO, f), abs=1e-12)


def test_semi_dual_maximised_at_oracle():
    f_star = oracle_solve(TWO_BY_TWO).potentials.f
    best = semi_dual_value(TWO_BY_TWO, f_star)
    rng = np.random.default_rng(3)
    for _ in range(100):
        delta = rng.uniform(-0.1, 0.1, 2)
        assert semi_dual_value(TWO_BY_TWO, f_star + delta) <= best + 1e-15


@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_semi_dual_concave_along_segments(seed, t):
    p = random_problem(np.random.default_rng(seed), 4, 3, 0.5)
    r = np.random.default_rng(seed + 1)
    f0, f1 = r.normal(size=4), r.normal(size=4)
    mid = semi_dual_value(p, (1 - t) * f0 + t * f1)
    assert mid >= (1 - t) * semi_dual_value(p, f0) + t * semi_dual_value(p, f1) - 1e-12


# --- gradient ----------------------------------------------------------------------

def test_gradient_vanishes_at_optimum(solved_6x8):
    p, o = solved_6x8
    assert np.max(np.abs(semi_dual_gradient(p, o.potentials.f))) <= 1e-10


@given(st.integers(0, 10_000))
def test_gradient_sums_to_zero(seed):
    r = np.random.default_rng(seed)
    p = random_problem(r, 5, 4, 0.3)
    assert abs(semi_dual_gradient(p, r.normal(size=5)).sum()) < 1e-14


def test_gradient_matches_finite_differences(rng):
    p = random_problem(rng, 5, 7, 0.8)
    f = rng.normal(scale=0.5, size=5)
    g = semi_dual_gradient(p, f)
    fd = fd_gradient(p, f)
    assert np.max(np.abs(g - fd)) <= 1e-5 * np.max(np.abs(g))


# --- Hessian ----------------------------------------------------------------------

def test_quadform_constant_direction(rng):
    p = random_problem(rng, 5, 7, 0.2)
    f = rng.normal(size=5)
    assert abs(semi_dual_hessian_quadform(p, f, np.ones(5))) <= 1e-14


@given(st.integers(0, 10_000))
def test_quadform_nonpositive(seed):
    r = np.random.default_rng(seed)
    p = random_problem(r, 5, 7, 0.2)
    assert semi_dual_hessian_quadform(p, r.normal(size=5), r.normal(size=5)) <= 0.0


def test_quadform_matches_second_difference(rng):
    p = random_problem(rng, 5, 7, 0.8)
    f, u = rng.normal(scale=0.5, size=5), rng.normal(size=5)
    h = 1e-4
    fd = (semi_dual_value(p, f + h * u) - 2 * semi_dual_value(p, f) + semi_dual_value(p, f - h * u)) / h**2
    q = semi_dual_hessian_quadform(p, f, u)
    assert abs(fd - q) <= 1e-4 * abs(q)


def test_full_hessian_structure(rng):
    p = random_problem(rng, 6, 9, 0.4)
    f = rng.normal(size=6)
    H = full_semi_dual_hessian(p, f)
    np.testing.assert_allclose(H, H.T, atol=0)
    assert np.max(np.abs(H @ np.ones(6))) <= 1e-12
    for _ in range(20):
        u = rng.normal(size=6)
        assert u @ H @ u == pytest.approx(semi_dual_hessian_quadform(p, f, u), rel=1e-12)
    evals = np.linalg.eigvalsh(H)
    assert evals.max() <= 1e-10 * np.abs(evals).max()


def test_full_hessian_size_guard():
    p = EotProblem.from_arrays(np.zeros((5, 2)))
    with pytest.raises(ValueError, match="too large"):
        full_semi_dual_hessian(p, np.zeros(5), dense_limit=4)


def test_full_hessian_eigenvalues_at_optimum(solved_6x8):
    p, o = solved_6x8
    H = full_semi_dual_hessian(p, o.potentials.f)
    # generalised problem in the alpha-weighted geometry
    s = np.sqrt(p.alpha.weights)
    evals = np.sort(np.linalg.eigvalsh(H / s[:, None] / s[None, :]))
    rhos = dense_modes(build_operator(p, o.potentials), 5).rhos
    expected = np.sort(np.concatenate([-(1 - rhos**2) / p.epsilon, [0.0]]))
    np.testing.assert_allclose(evals, expected, atol=1e-9)


# --- restricted derivatives ------------------------------------------------------------

def test_restricted_single_vector(rng):
    p = random_problem(rng, 5, 7, 0.3)
    f = rng.normal(size=5)
    v = rng.normal(size=5)
    v /= np.linalg.norm(v)
    d = restricted_derivatives(p, f, v)
    assert d.hess[0, 0] == pytest.approx(semi_dual_hessian_quadform(p, f, v), rel=1e-13)
    assert d.grad[0] == pytest.approx(v @ semi_dual_gradient(p, f), rel=1e-12)


def test_restricted_symmetric(rng):
    p = random_problem(rng, 7, 5, 0.3)
    d = restricted_derivatives(p, rng.normal(size=7), rng.normal(size=(7, 4)))
    assert np.max(np.abs(d.hess - d.hess.T)) <= 1e-13 * np.max(np.abs(d.hess))


def test_restricted_diagonal_in_exact_basis(solved_6x8):
    p, o = solved_6x8
    basis = dense_modes(build_operator(p, o.potentials), 4)
    d = restricted_derivatives(p, o.potentials.f, basis)
    off = d.hess - np.diag(np.diag(d.hess))
    assert np.max(np.abs(off)) <= 1e-8
    np.testing.assert_allclose(np.diag(d.hess), -(1 - basis.rhos**2) / p.epsilon, atol=1e-8)


def test_restricted_dimension_check(rng):
    p = random_problem(rng, 4, 5, 1.0)
    with pytest.raises(ValueError):
        restricted_derivatives(p, np.zeros(4), np.ones((5, 2)))
