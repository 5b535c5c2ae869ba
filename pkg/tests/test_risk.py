import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from worstrisk.moments import EnvironmentMoments, EnvironmentSample, estimate_moments
from worstrisk.risk import (
    QuadraticRisk,
    WorstRiskObjective,
    decomposition_value,
    from_moments,
    gamma_to_tau,
    optimal_weights,
    risk_eval,
    risk_eval_many,
    worst_risk,
)

from conftest import random_objective


def const(v, p=1):
    """A risk that equals ``v`` everywhere."""
    return QuadraticRisk(np.zeros((p, p)), np.zeros(p), v)


def test_risk_eval_examples():
    R = QuadraticRisk([[2.0]], [1.0], 1.0)
    assert risk_eval(R, [0.0]) == 1.0
    assert risk_eval(R, [1.0]) == 1.0
    assert risk_eval(QuadraticRisk(np.eye(2), np.zeros(2), 0.0), [3.0, 4.0]) == 25.0
    with pytest.raises(ValueError):
        risk_eval(R, [1.0, 2.0])


def test_from_moments_examples():
    m = estimate_moments(EnvironmentSample(np.array([[1.0], [2.0], [3.0]]), np.array([1.0, 2.0, 3.0]), "O"))
    assert risk_eval(from_moments(m), [1.0]) == pytest.approx(0.0, abs=1e-12)
    R0 = from_moments(EnvironmentMoments(np.zeros((2, 2)), np.zeros(2), 0.0))
    assert risk_eval(R0, [5.0, -3.0]) == 0.0
    R = from_moments(EnvironmentMoments([[1.0]], [0.0], 4.0))
    assert R.minimizer()[0] == 0.0 and risk_eval(R, R.minimizer()) == 4.0


def test_worst_risk_examples():
    obj = WorstRiskObjective((const(4.0), const(1.0)), const(1.0), gamma=2.0)
    assert obj.tau == 0.5
    val, arg = worst_risk(obj, [0.0])
    assert val == pytest.approx(5.5) and arg == (0,)

    obj = WorstRiskObjective((const(4.0), const(1.0)), const(100.0), gamma=1.0)
    assert worst_risk(obj, [0.3])[0] == 4.0

    R = QuadraticRisk([[1.0]], [0.5], 2.0)
    obj = WorstRiskObjective((R, R), const(1.0), gamma=3.0)
    assert worst_risk(obj, [0.7])[1] == (0, 1)


def test_optimal_weights_examples():
    O = const(1.0)
    w = optimal_weights(WorstRiskObjective((const(3.0), const(1.0)), O, 1.0), [0.0])
    np.testing.assert_array_equal(w, [1.0, 0.0])
    w = optimal_weights(WorstRiskObjective((const(3.0), const(3.0), const(1.0)), O, 1.0), [0.0])
    np.testing.assert_allclose(w**2, [0.5, 0.5, 0.0])
    np.testing.assert_allclose(w, [2**-0.5, 2**-0.5, 0.0])
    w = optimal_weights(WorstRiskObjective((const(3.0),), O, 1.0), [0.0])
    np.testing.assert_array_equal(w, [1.0])


def test_decomposition_examples():
    obj = WorstRiskObjective((const(4.0), const(1.0)), const(1.0), gamma=1.0)
    assert decomposition_value(obj, [0.0]) == pytest.approx(4.0)
    obj = WorstRiskObjective((const(4.0), const(1.0)), const(1.0), gamma=2.0)
    assert decomposition_value(obj, [0.0]) == pytest.approx(5.5)
    R1, RO = QuadraticRisk([[2.0]], [1.0], 3.0), QuadraticRisk([[1.0]], [-1.0], 0.5)
    obj = WorstRiskObjective((R1,), RO, gamma=3.0)
    for b in (-1.0, 0.0, 2.5):
        assert decomposition_value(obj, [b]) == pytest.approx(2 * R1([b]) - RO([b]))


def test_gamma_validation():
    assert gamma_to_tau(0.0) == -0.5
    with pytest.raises(ValueError):
        WorstRiskObjective((const(1.0),), const(1.0), gamma=-0.01)
    with pytest.raises(ValueError):
        WorstRiskObjective((), const(1.0), gamma=1.0)


def test_grad_and_constant_term():
    R = QuadraticRisk([[2.0, 0.5], [0.5, 1.0]], [1.0, -1.0], 3.0)
    assert R([0.0, 0.0]) == 3.0
    b = np.array([0.3, -0.7])
    np.testing.assert_array_equal(R.grad(b), 2 * (R.G @ b - R.z))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.floats(0, 5), st.integers(0, 2**32 - 1))
def test_gradient_matches_central_differences(p, k, gamma, seed):
    rng = np.random.default_rng(seed)
    obj = random_objective(rng, p, k, gamma, min_eig=-np.inf)
    beta = rng.standard_normal(p)
    h = 1e-5
    for i in range(k):
        H = obj.penalized(i)
        fd = np.array([(H(beta + h * e) - H(beta - h * e)) / (2 * h) for e in np.eye(p)])
        g = obj.h_grad(i, beta)
        assert np.max(np.abs(fd - g)) <= 1e-5 * max(1.0, np.max(np.abs(g)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.floats(0, 5), st.integers(0, 2**32 - 1))
def test_f_convex_along_segments(p, k, gamma, seed):
    rng = np.random.default_rng(seed)
    obj = random_objective(rng, p, k, gamma, min_eig=0.0)
    for _ in range(100):
        a, b = rng.standard_normal((2, p)) * 3
        mid = obj.f(0.5 * (a + b))
        assert mid <= 0.5 * (obj.f(a) + obj.f(b)) + 1e-10 * (1 + abs(mid))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.floats(0, 5), st.integers(0, 2**32 - 1))
def test_vectorised_paths_agree(p, k, gamma, seed):
    rng = np.random.default_rng(seed)
    obj = random_objective(rng, p, k, gamma, min_eig=-np.inf)
    B = rng.standard_normal((20, p))
    np.testing.assert_allclose(obj.f_many(B), [obj.f(b) for b in B], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(risk_eval_many(obj.risks[0], B), [obj.risks[0](b) for b in B], rtol=1e-12, atol=1e-12)
