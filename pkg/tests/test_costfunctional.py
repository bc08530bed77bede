import numpy as np
import pytest

from pdeopt import costfunctional as cf


def constant_term(value, weight=1.0):
    return cf.Term(evaluator=lambda q: value, weight=weight)


def test_scaling_definition_unit_weights():
    cost = cf.CostFunctional([constant_term(2.0), constant_term(0.5)])
    factors = cf.compute_scaling(cost, np.zeros(1))
    np.testing.assert_allclose(factors, [0.5, 2.0])


def test_scaling_definition_mixed_weights():
    cost = cf.CostFunctional([constant_term(2.0, weight=10.0), constant_term(0.5, weight=1.0)])
    factors = cf.compute_scaling(cost, np.zeros(1))
    np.testing.assert_allclose(factors, [5.0, 2.0])


def test_degenerate_term_warns_and_keeps_factor_one():
    cost = cf.CostFunctional([constant_term(0.0), constant_term(3.0)])
    with pytest.warns(UserWarning, match="cost term 0"):
        factors = cf.compute_scaling(cost, np.zeros(1))
    assert factors[0] == 1.0
    assert factors[1] == pytest.approx(1.0 / 3.0)


def test_post_scaling_identity_to_1e14():
    values = (3.7, -0.004, 125.0)
    weights = (1.0, 2.5, 0.1)
    cost = cf.CostFunctional([constant_term(v, w) for v, w in zip(values, weights)])
    cf.compute_scaling(cost, np.zeros(1))
    scaled = cost.factors * cost.evaluate_terms(np.zeros(1))
    for got, want in zip(np.abs(scaled), weights):
        assert abs(got - want) <= 1e-14 * want


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        cf.Term(evaluator=lambda q: 1.0, weight=-1.0)


def test_scaled_gradient_composition_and_argmin_invariance():
    # single quadratic term: scaling by gamma > 0 keeps the same minimizer
    a = np.array([2.0, -1.0])
    term = cf.Term(evaluator=lambda q: 0.5 * float((q - a) @ (q - a)) + 7.0,
                   weight=4.0, gradient=lambda q: q - a)
    cost = cf.CostFunctional([term])
    g_before = cost.gradient(np.zeros(2))
    cf.compute_scaling(cost, np.zeros(2))
    g_after = cost.gradient(np.zeros(2))
    np.testing.assert_allclose(g_after, cost.factors[0] * g_before)
    # the stationary point is unchanged
    assert np.linalg.norm(cost.gradient(a.copy())) == 0.0


def test_factors_frozen_until_recomputed():
    cost = cf.CostFunctional([constant_term(2.0)])
    np.testing.assert_array_equal(cost.factors, [1.0])
    cf.compute_scaling(cost, np.zeros(1))
    np.testing.assert_allclose(cost.factors, [0.5])
    assert cost.evaluate(np.zeros(1)) == pytest.approx(1.0)
