import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdeopt import linesearch as ls


def test_armijo_hand_trace():
    """phi(a) = a^2 - a, phi0 = 0, dphi0 = -1: a=1 rejected, a=0.5 accepted."""
    phi = lambda a: a * a - a
    cfg = ls.LineSearchConfig(method="armijo", c1=1e-4, alpha0=1.0, shrink=0.5)
    alpha, value, trials = ls.armijo(phi, 0.0, -1.0, cfg)
    assert [t[0] for t in trials] == [1.0, 0.5]
    assert alpha == 0.5
    assert value == -0.25


def test_armijo_accepts_decreasing_linear_immediately():
    phi = lambda a: -3.0 * a
    cfg = ls.LineSearchConfig(method="armijo")
    alpha, _, trials = ls.armijo(phi, 0.0, -3.0, cfg)
    assert alpha == cfg.alpha0
    assert len(trials) == 1


def test_armijo_rejects_ascent_slope():
    with pytest.raises(ValueError, match="descent"):
        ls.armijo(lambda a: a, 0.0, 0.5, ls.LineSearchConfig())


def test_armijo_failure_carries_trials():
    cfg = ls.LineSearchConfig(method="armijo", max_trials=5)
    with pytest.raises(ls.LineSearchError) as err:
        ls.armijo(lambda a: 1.0, 0.0, -1.0, cfg)
    assert len(err.value.trials) == 5


def test_quadratic_model_recovers_exact_minimizer():
    """phi(a) = a^2 - 2a sampled at a0=1: the model returns the true minimizer 1."""
    assert ls.quadratic_min(0.0, -2.0, 1.0, -1.0) == 1.0


def test_polynomial_step_clamps_enormous_value_to_low_fraction():
    cfg = ls.LineSearchConfig(method="polynomial")
    step = ls.polynomial_step(0.0, -1.0, [(1.0, 1e6)], cfg)
    assert step == cfg.low * 1.0


def test_polynomial_step_no_trials_rejected():
    with pytest.raises(ValueError):
        ls.polynomial_step(0.0, -1.0, [])


def test_cubic_model_reproduces_cubic_stationary_point():
    """Consistent samples of a^3 - 3a: the fitted cubic's minimizer is 1."""
    phi = lambda a: a**3 - 3.0 * a
    phi0, dphi0 = 0.0, -3.0
    trials = [(4.0, phi(4.0)), (2.5, phi(2.5))]

    # oracle: fit c3 a^3 + c2 a^2 + dphi0 a + phi0 through the two samples,
    # then take the positive root of the derivative
    a1, a2 = trials[0][0], trials[1][0]
    lhs = np.array([[a1**3, a1**2], [a2**3, a2**2]])
    rhs = np.array([trials[0][1] - phi0 - dphi0 * a1, trials[1][1] - phi0 - dphi0 * a2])
    c3, c2 = np.linalg.solve(lhs, rhs)
    roots = np.roots([3.0 * c3, 2.0 * c2, dphi0])
    oracle = float(max(roots))
    assert oracle == pytest.approx(1.0, abs=1e-12)  # the cubic is exactly phi

    cfg = ls.LineSearchConfig(method="polynomial")
    step = ls.polynomial_step(phi0, dphi0, trials, cfg)
    # the stationary point lies inside the safeguard interval [0.25, 1.25]
    assert cfg.low * a2 <= oracle <= cfg.high * a2
    assert step == pytest.approx(oracle, rel=1e-12)


def test_polynomial_search_on_exact_quadratic_needs_two_evaluations():
    evals = []

    def phi(a):
        evals.append(a)
        return a * a - a

    cfg = ls.LineSearchConfig(method="polynomial", alpha0=1.0)
    alpha, _, _ = ls.search(phi, 0.0, -1.0, cfg)
    assert alpha == 0.5  # the exact minimizer of a^2 - a
    assert len(evals) <= 2


def test_polynomial_beats_armijo_on_stiff_quadratic():
    phi = lambda a: 20.0 * a * a - a
    counts = {}
    for method in ("armijo", "polynomial"):
        n = 0

        def counted(a):
            nonlocal n
            n += 1
            return phi(a)

        ls.search(counted, 0.0, -1.0, ls.LineSearchConfig(method=method))
        counts[method] = n
    assert counts["polynomial"] < counts["armijo"]


@settings(max_examples=40, deadline=None)
@given(
    curvature=st.floats(0.5, 200.0),
    slope=st.floats(-10.0, -0.01),
    method=st.sampled_from(["armijo", "polynomial"]),
)
def test_accepted_steps_satisfy_armijo_inequality(curvature, slope, method):
    phi = lambda a: 0.5 * curvature * a * a + slope * a
    cfg = ls.LineSearchConfig(method=method)
    alpha, value, _ = ls.search(phi, 0.0, slope, cfg)
    assert value <= 0.0 + cfg.c1 * alpha * slope


@settings(max_examples=40, deadline=None)
@given(
    a_last=st.floats(1e-3, 10.0),
    f_last=st.floats(1e-3, 1e7),
    slope=st.floats(-10.0, -0.01),
)
def test_polynomial_step_stays_in_safeguard_interval(a_last, f_last, slope):
    # f_last > phi0 + c1 a dphi0 means the trial was genuinely rejected
    cfg = ls.LineSearchConfig(method="polynomial")
    step = ls.polynomial_step(0.0, slope, [(a_last, f_last)], cfg)
    assert cfg.low * a_last <= step <= cfg.high * a_last


def test_config_validation():
    with pytest.raises(ValueError):
        ls.LineSearchConfig(c1=1.5)
    with pytest.raises(ValueError):
        ls.LineSearchConfig(shrink=0.0)
    with pytest.raises(ValueError):
        ls.LineSearchConfig(low=0.6, high=0.5)
    with pytest.raises(ValueError):
        ls.LineSearchConfig(method="golden")


def test_audit_hook_records_accepts():
    ls.ARMIJO_AUDIT = []
    try:
        ls.search(lambda a: -a, 0.0, -1.0, ls.LineSearchConfig(method="armijo"))
        assert len(ls.ARMIJO_AUDIT) == 1
        alpha, phi0, dphi0, value = ls.ARMIJO_AUDIT[0]
        assert value <= phi0 + 1e-4 * alpha * dphi0
    finally:
        ls.ARMIJO_AUDIT = None
