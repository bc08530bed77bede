import numpy as np
import pytest

from pdeopt import optimize
from pdeopt.linesearch import LineSearchConfig


class Quadratic:
    """J(q) = 1/2 (q-a)^T H (q-a) with analytic gradient, identity product."""

    def __init__(self, a, h=None):
        self.a = np.asarray(a, dtype=float)
        self.h = np.eye(len(self.a)) if h is None else np.asarray(h, dtype=float)

    def evaluate(self, q):
        d = q - self.a
        return 0.5 * float(d @ (self.h @ d))

    def gradient(self, q):
        return self.h @ (q - self.a)

    def inner(self, u, v):
        return float(u @ v)

    def norm(self, v):
        return float(np.linalg.norm(v))


def cfg(**kw):
    method = kw.pop("method", "polynomial")
    return optimize.OptimizerConfig(linesearch=LineSearchConfig(method=method), **kw)


def test_bowl_steepest_polynomial_two_iterations():
    a = np.array([0.3, -1.2, 2.0])
    res = optimize.minimize(Quadratic(a), np.zeros(3),
                            cfg(algorithm="steepest", rtol=1e-12, max_iter=5))
    assert res.iterations <= 2
    assert np.linalg.norm(res.q - a) <= 1e-10


def test_already_optimal_returns_initial_record_only():
    a = np.array([1.0, 2.0])
    res = optimize.minimize(Quadratic(a), a.copy(), cfg(algorithm="lbfgs", rtol=1e-3))
    assert res.converged
    assert len(res.history) == 1
    assert res.history[0].iteration == 0


def test_cost_nonincreasing_and_histories_bitwise_reproducible(poisson_control_16):
    mesh, functional, _, _ = poisson_control_16
    q0 = np.zeros(mesh.n_nodes)
    runs = []
    for _ in range(2):
        functional._q = None  # drop the state cache between runs
        res = optimize.minimize(functional, q0, cfg(algorithm="lbfgs", rtol=1e-6, max_iter=30))
        runs.append(res)
    first, second = runs
    assert [r.cost for r in first.history] == [r.cost for r in second.history]
    assert [r.grad_norm for r in first.history] == [r.grad_norm for r in second.history]
    assert [r.step for r in first.history] == [r.step for r in second.history]
    costs = [r.cost for r in first.history]
    assert all(c2 <= c1 for c1, c2 in zip(costs, costs[1:]))


def test_lbfgs_reduces_poisson_gradient_by_1e3(poisson_control_16):
    mesh, functional, _, _ = poisson_control_16
    functional._q = None
    res = optimize.minimize(functional, np.zeros(mesh.n_nodes),
                            cfg(algorithm="lbfgs", rtol=1e-9, max_iter=50))
    assert res.history[0].grad_norm / res.history[-1].grad_norm >= 1e3


def test_steepest_descent_reaches_same_cost_plateau(poisson_control_16):
    mesh, functional, _, _ = poisson_control_16
    functional._q = None
    res_lbfgs = optimize.minimize(functional, np.zeros(mesh.n_nodes),
                                  cfg(algorithm="lbfgs", rtol=1e-9, max_iter=50))
    functional._q = None
    res_sd = optimize.minimize(functional, np.zeros(mesh.n_nodes),
                               cfg(algorithm="steepest", rtol=1e-9, max_iter=300))
    assert res_sd.cost == pytest.approx(res_lbfgs.cost, rel=1e-6)


def test_ncg_direction_formula():
    g = np.array([1.0, 2.0])
    d_old = np.array([0.5, -0.5])
    # g_new == g_old: beta = 0
    d = optimize.ncg_direction(g, g, d_old)
    np.testing.assert_allclose(d, -g)
    # negative PR numerator is clamped to zero
    g_new = np.array([0.1, 0.0])
    g_old = np.array([1.0, 0.0])
    assert float(g_new @ (g_new - g_old)) < 0.0
    d = optimize.ncg_direction(g_new, g_old, d_old)
    np.testing.assert_allclose(d, -g_new)


def test_ncg_matches_linear_cg_for_first_steps():
    """PR+ with exact line search equals linear CG on an SPD quadratic."""
    rng = np.random.default_rng(5)
    m = rng.standard_normal((6, 6))
    h = m @ m.T + 6.0 * np.eye(6)
    b = rng.standard_normal(6)

    # textbook linear CG oracle on H x = b
    x = np.zeros(6)
    r = b - h @ x
    p = r.copy()
    cg_iterates = []
    for _ in range(3):
        alpha = float(r @ r) / float(p @ (h @ p))
        x = x + alpha * p
        cg_iterates.append(x.copy())
        r_new = r - alpha * (h @ p)
        beta = float(r_new @ r_new) / float(r @ r)
        p = r_new + beta * p
        r = r_new

    # NCG with exact steps on J(q) = 1/2 q^T H q - b^T q
    q = np.zeros(6)
    g = h @ q - b
    d = -g
    ncg_iterates = []
    for _ in range(3):
        alpha = -float(g @ d) / float(d @ (h @ d))
        q = q + alpha * d
        ncg_iterates.append(q.copy())
        g_new = h @ q - b
        d = optimize.ncg_direction(g_new, g, d)
        g = g_new

    for got, want in zip(ncg_iterates, cg_iterates):
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)


def test_lbfgs_memory_zero_reproduces_steepest_exactly():
    rng = np.random.default_rng(11)
    m = rng.standard_normal((5, 5))
    h = m @ m.T + 2.0 * np.eye(5)
    a = rng.standard_normal(5)
    q0 = np.zeros(5)
    res_m0 = optimize.minimize(Quadratic(a, h), q0,
                               cfg(algorithm="lbfgs", lbfgs_memory=0, rtol=1e-8, max_iter=40))
    res_sd = optimize.minimize(Quadratic(a, h), q0,
                               cfg(algorithm="steepest", rtol=1e-8, max_iter=40))
    assert len(res_m0.history) == len(res_sd.history)
    for r0, r1 in zip(res_m0.history, res_sd.history):
        assert r0.cost == r1.cost
        assert r0.step == r1.step
        assert r0.grad_norm == r1.grad_norm


def test_line_search_failure_returns_best_iterate_with_flag():
    class LyingGradient:
        """Claims descent along +e0 while the cost increases that way."""

        def evaluate(self, q):
            return float(q[0])

        def gradient(self, q):
            return np.array([-1.0])  # wrong sign on purpose

        def inner(self, u, v):
            return float(u @ v)

        def norm(self, v):
            return float(np.linalg.norm(v))

    res = optimize.minimize(LyingGradient(), np.zeros(1),
                            cfg(algorithm="steepest", rtol=1e-10, max_iter=10))
    assert not res.converged
    assert "line search failed" in res.message
    assert res.q[0] == 0.0


def test_nonfinite_initial_cost_raises():
    class BadCost(Quadratic):
        def evaluate(self, q):
            return float("nan")

    with pytest.raises(ValueError, match="finite"):
        optimize.minimize(BadCost(np.zeros(2)), np.zeros(2), cfg())


def test_config_validation():
    with pytest.raises(ValueError):
        optimize.OptimizerConfig(algorithm="newton")
    with pytest.raises(ValueError):
        optimize.OptimizerConfig(rtol=-1.0)
