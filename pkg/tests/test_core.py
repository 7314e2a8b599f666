import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sknr import (
    CostMatrix,
    Coupling,
    DiscreteMeasure,
    EotProblem,
    Potentials,
    coupling_from,
    ctransform_of_f,
    ctransform_of_g,
    log_sum_exp,
    marginal_error,
    osc_norm,
)
from sknr.core import marginal_error_inf, marginal_residuals
from sknr.harness import oracle_solve

from conftest import random_problem

finite = st.floats(-50, 50, allow_nan=False)


# --- types --------------------------------------------------------------------

def test_measure_rejects_zero_mass():
    with pytest.raises(ValueError, match="strictly positive"):
        DiscreteMeasure([0.5, 0.5, 0.0])


def test_measure_sum_tolerance():
    DiscreteMeasure([0.5, 0.5 + 5e-13])
    with pytest.raises(ValueError, match="sum"):
        DiscreteMeasure([0.5, 0.5 + 1e-10])


def test_measure_rejects_nan_and_empty():
    with pytest.raises(ValueError):
        DiscreteMeasure([np.nan, 1.0])
    with pytest.raises(ValueError):
        DiscreteMeasure([])


def test_normalized_and_uniform():
    m = DiscreteMeasure.normalized([1, 3])
    np.testing.assert_allclose(m.weights, [0.25, 0.75])
    np.testing.assert_allclose(m.log_weights, np.log([0.25, 0.75]))
    assert len(DiscreteMeasure.uniform(4)) == 4


def test_cost_validation():
    with pytest.raises(ValueError):
        CostMatrix(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        CostMatrix([[0.0, np.inf]])
    with pytest.raises(ValueError):
        CostMatrix([1.0, 2.0])


def test_problem_validation():
    with pytest.raises(ValueError, match="do not match"):
        EotProblem.from_arrays(np.zeros((2, 3)), alpha=[0.5, 0.5], beta=[0.5, 0.5])
    with pytest.raises(ValueError, match="epsilon"):
        EotProblem.from_arrays(np.zeros((2, 2)), epsilon=0.0)
    p = EotProblem.from_arrays(np.zeros((2, 3)), epsilon=0.3)
    assert p.shape == (2, 3)
    assert p.with_epsilon(0.1).epsilon == 0.1


def test_potentials_distance_is_gauge_invariant(rng):
    p = random_problem(rng, 4, 5, 1.0)
    a = Potentials(rng.normal(size=4), rng.normal(size=5))
    b = Potentials(a.f + 3.0, a.g - 3.0)
    assert a.distance(b, p.alpha) < 1e-12
    assert abs(p.alpha.weights @ a.normalized(p.alpha).f) < 1e-12


# --- log_sum_exp ----------------------------------------------------------------

def test_lse_trivial():
    assert log_sum_exp([0.0, 0.0], np.log([0.5, 0.5])) == pytest.approx(0.0, abs=1e-15)
    assert log_sum_exp([1000.0, 1000.0], [0.0, 0.0]) == pytest.approx(1000 + math.log(2), rel=1e-15)


def test_lse_against_extended_precision():
    # 50-digit evaluation with mpmath
    expected = 0.4804922094646261769559628
    got = log_sum_exp([0.3, -0.7, 1.1], [math.log(1 / 3)] * 3)
    assert got == pytest.approx(expected, abs=1e-15)


def test_lse_empty():
    with pytest.raises(ValueError, match="empty"):
        log_sum_exp([], [])


# --- c-transforms ---------------------------------------------------------------

def test_ctransform_zero_cost():
    p = EotProblem.from_arrays(np.zeros((3, 4)), epsilon=0.7)
    np.testing.assert_allclose(ctransform_of_f(p, np.zeros(3)), 0.0, atol=1e-15)
    np.testing.assert_allclose(ctransform_of_g(p, np.zeros(4)), 0.0, atol=1e-15)


def test_ctransform_high_precision_2x2():
    p = EotProblem.from_arrays([[0.0, 1.0], [1.0, 0.0]], epsilon=1.0)
    g = ctransform_of_f(p, np.zeros(2))
    np.testing.assert_allclose(g, [0.3798854930417224753682366] * 2, rtol=0, atol=1e-15)
    # g is symmetric here, so the f-transform of it returns exactly zero
    np.testing.assert_allclose(ctransform_of_g(p, g), 0.0, atol=1e-15)


def test_ctransform_high_precision_weighted():
    p = EotProblem.from_arrays([[0.0, 1.0], [2.0, 0.5]], [0.3, 0.7], [0.6, 0.4], 0.1)
    g = ctransform_of_f(p, np.array([0.2, -0.1]))
    np.testing.assert_allclose(g, [-0.079602719591350786542, 0.63002938206420349684], atol=1e-15)


def test_ctransform_tiny_epsilon_stays_finite():
    p = EotProblem.from_arrays([[0.0, 900.0, 3.0], [1000.0, 2.0, 7.0]], epsilon=1e-3)
    g = ctransform_of_f(p, np.zeros(2))
    np.testing.assert_allclose(
        g, [0.00069314718055994530942, 2.0006931471805599453, 3.0006931471805599453], rtol=1e-15)


@given(st.integers(0, 2**31 - 1), st.sampled_from([0.05, 0.5, 5.0]), finite)
def test_ctransform_shift_equivariance(seed, eps, c):
    p = random_problem(np.random.default_rng(seed), 3, 4, eps)
    f = np.random.default_rng(seed + 1).normal(size=3)
    g = ctransform_of_f(p, f)
    np.testing.assert_allclose(ctransform_of_f(p, f + c), g - c, atol=1e-10)
    fg = ctransform_of_g(p, g)
    np.testing.assert_allclose(ctransform_of_g(p, g + c), fg - c, atol=1e-10)


def test_ctransform_shape_check(rng):
    p = random_problem(rng, 3, 4, 1.0)
    with pytest.raises(ValueError):
        ctransform_of_f(p, np.zeros(4))
    with pytest.raises(ValueError):
        ctransform_of_g(p, np.zeros(3))


def test_ctransform_gives_exact_marginal(rng):
    p = random_problem(rng, 5, 6, 0.3)
    f = rng.normal(size=5)
    g = ctransform_of_f(p, f)
    plan = coupling_from(p, Potentials(f, g)).plan
    np.testing.assert_allclose(plan.sum(axis=0), p.beta.weights, atol=1e-15)


# --- couplings and marginal errors ---------------------------------------------

def test_coupling_independent_case(rng):
    p = random_problem(rng, 3, 4, 1.0)
    p0 = EotProblem(np.zeros((3, 4)), p.alpha, p.beta, 1.0)
    plan = coupling_from(p0, Potentials.zeros(p0)).plan
    np.testing.assert_allclose(plan, np.outer(p.alpha.weights, p.beta.weights), rtol=1e-15)


@given(arrays(float, 3, elements=finite), arrays(float, 4, elements=finite), finite)
def test_coupling_gauge_invariance(f, g, c):
    p = EotProblem.from_arrays(np.arange(12.0).reshape(3, 4) / 4, epsilon=2.0)
    a = coupling_from(p, Potentials(f, g)).plan
    b = coupling_from(p, Potentials(f + c, g - c)).plan
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-300)


def test_coupling_rejects_negative():
    with pytest.raises(ValueError):
        Coupling(np.array([[0.5, -0.1]]))


def test_oracle_marginals_2x2():
    p = EotProblem.from_arrays([[0.0, 1.0], [2.0, 0.5]], [0.3, 0.7], [0.6, 0.4], 0.1)
    plan = oracle_solve(p).coupling.plan
    np.testing.assert_allclose(plan.sum(1), p.alpha.weights, atol=1e-12)
    np.testing.assert_allclose(plan.sum(0), p.beta.weights, atol=1e-12)
    assert plan.sum() == pytest.approx(1.0, abs=1e-9)


def test_marginal_error_cases(rng):
    p = random_problem(rng, 3, 5, 1.0)
    indep = np.outer(p.alpha.weights, p.beta.weights)
    assert marginal_error(p, Coupling(indep)) < 1e-15
    doubled = marginal_error(p, Coupling(2 * indep))
    expected = np.linalg.norm(p.alpha.weights) + np.linalg.norm(p.beta.weights)
    assert doubled == pytest.approx(expected, rel=1e-14)
    assert marginal_error_inf(p, Coupling(2 * indep)) == pytest.approx(
        p.alpha.weights.max() + p.beta.weights.max(), rel=1e-14)


def test_marginal_error_after_g_update(rng):
    p = random_problem(rng, 5, 6, 0.5)
    f = rng.normal(size=5)
    plan = coupling_from(p, Potentials(f, ctransform_of_f(p, f)))
    row, col = marginal_residuals(p, plan)
    assert np.linalg.norm(col) <= 1e-12
    assert np.linalg.norm(row) > 1e-6


# --- oscillation norm -------------------------------------------------------------

def test_osc_norm_cases():
    assert osc_norm(np.full(4, 2.5)) == 0.0
    assert osc_norm([0, 3, 1]) == 3.0
    with pytest.raises(ValueError):
        osc_norm([])


@given(arrays(float, st.integers(1, 8), elements=finite), finite)
def test_osc_norm_shift_invariant(v, c):
    assert osc_norm(v + c) == pytest.approx(osc_norm(v), abs=1e-12)
