import numpy as np
import pytest
import scipy.sparse as sp

from pdeopt import fem, reduced
from pdeopt import mesh as msh


def test_evaluate_tracking_parts(poisson_control_16):
    mesh, functional, problem, y_d = poisson_control_16
    # q = 0: only the misfit term remains
    j0 = functional.evaluate(np.zeros(mesh.n_nodes))
    y0 = functional.last_state
    mass = functional.design_product
    expected = 0.5 * (y0 - y_d) @ (mass @ (y0 - y_d))
    assert j0 == pytest.approx(expected, rel=1e-14)


def test_evaluate_zero_misfit_leaves_regularization():
    # y_d equals the state at q, so only alpha/2 ||q||^2 remains
    mesh, functional, problem, _ = build_small_control(alpha=0.5)
    rng = np.random.default_rng(3)
    q = rng.standard_normal(mesh.n_nodes)
    functional.evaluate(q)
    y_at_q = functional.last_state.copy()

    mesh2, functional2, _, _ = build_small_control(alpha=0.5, y_desired=y_at_q)
    mass = functional2.design_product
    expected = 0.5 * 0.5 * q @ (mass @ q)
    assert functional2.evaluate(q) == pytest.approx(expected, rel=1e-12)

    mesh3, functional3, _, _ = build_small_control(alpha=0.0, y_desired=y_at_q)
    assert functional3.evaluate(q) == pytest.approx(0.0, abs=1e-18)


def build_small_control(alpha=1e-4, resolution=8, y_desired=None):
    mesh = msh.unit_square(resolution)
    stiff = fem.assemble_stiffness(mesh)
    mass = fem.assemble_mass(mesh)
    bcs = [fem.DirichletBC(mk, 0.0) for mk in (1, 2, 3, 4)]
    idx, _ = fem.dirichlet_values(mesh, bcs)
    a_bc, _ = fem.eliminate(stiff, np.zeros(mesh.n_nodes), idx)
    free = np.ones(mesh.n_nodes)
    free[idx] = 0.0
    em = (sp.diags(free) @ mass).tocsr()
    if y_desired is None:
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        y_desired = fem.solve(a_bc, em @ (np.sin(np.pi * x) * np.sin(np.pi * y)))
    y_d = y_desired
    problem = reduced.DiscreteProblem(
        residual=lambda yv, q: a_bc @ yv - em @ q,
        state_jacobian=lambda yv, q: a_bc,
        design_jacobian=lambda yv, q: -em,
        cost=lambda yv, q: 0.5 * (yv - y_d) @ (mass @ (yv - y_d)) + 0.5 * alpha * q @ (mass @ q),
        cost_grad_state=lambda yv, q: mass @ (yv - y_d),
        cost_grad_design=lambda yv, q: alpha * (mass @ q),
        state_dim=mesh.n_nodes,
        design_dim=mesh.n_nodes,
        linear_state=True,
    )
    functional = reduced.ReducedFunctional(problem, design_product=mass)
    return mesh, functional, problem, (a_bc, em, mass, y_d)


def test_gradient_matches_hand_derived_optimality(poisson_control_16, rng):
    """Representative = alpha u + p with the adjoint -Lap(p) = y - y_d, p = 0 on the boundary."""
    mesh, functional, problem, y_d = poisson_control_16
    alpha = 1e-4
    q = rng.standard_normal(mesh.n_nodes) * 0.3
    functional.evaluate(q)
    g = functional.gradient(q)

    stiff = fem.assemble_stiffness(mesh)
    mass = fem.assemble_mass(mesh)
    bcs = [fem.DirichletBC(mk, 0.0) for mk in (1, 2, 3, 4)]
    idx, _ = fem.dirichlet_values(mesh, bcs)
    a_bc, _ = fem.eliminate(stiff, np.zeros(mesh.n_nodes), idx)
    rhs = mass @ (functional.last_state - y_d)
    rhs[idx] = 0.0
    p_hat = fem.solve(a_bc, rhs)
    expected = alpha * q + p_hat
    assert np.linalg.norm(g - expected) <= 1e-10 * np.linalg.norm(expected)


def test_gradient_zero_at_exact_optimum():
    a = np.array([1.0, -2.0, 0.5])
    problem = reduced.DiscreteProblem(
        residual=lambda yv, q: yv,
        state_jacobian=lambda yv, q: sp.identity(1, format="csr"),
        design_jacobian=lambda yv, q: sp.csr_matrix((1, 3)),
        cost=lambda yv, q: 0.5 * float((q - a) @ (q - a)),
        cost_grad_state=lambda yv, q: np.zeros(1),
        cost_grad_design=lambda yv, q: q - a,
        state_dim=1,
        design_dim=3,
        linear_state=True,
    )
    functional = reduced.ReducedFunctional(problem)
    functional.evaluate(a.copy())
    assert np.linalg.norm(functional.gradient(a.copy())) <= 1e-14


def test_gradient_against_fd_sweep(poisson_control_16, rng):
    mesh, functional, problem, _ = poisson_control_16
    q = rng.standard_normal(mesh.n_nodes) * 0.2
    functional.evaluate(q)
    g = functional.gradient(q)
    d = rng.standard_normal(mesh.n_nodes)
    d /= np.linalg.norm(d)
    adj = functional.inner(g, d)
    steps, vals = reduced.fd_directional(functional.evaluate, q, d)
    best = np.min(np.abs(vals - adj) / abs(adj))
    assert best <= 1e-6


def test_verify_derivatives_linear_is_exact(poisson_control_16):
    mesh, functional, problem, _ = poisson_control_16
    q = np.linspace(-1.0, 1.0, mesh.n_nodes)
    y = problem.solve_state(q)
    report = reduced.verify_derivatives(problem, y, q, n_directions=2, seed=1)
    # linear residual: central differences are exact at every step
    assert report.best("dR/dy") < 1e-9
    assert report.best("dR/dq") < 1e-9
    assert np.all(report.errors["dR/dy"] < 1e-7)


def test_verify_derivatives_cubic_residual_error_order():
    """Central-difference error of the y^3 residual shrinks at >= first order in the step."""
    mesh = msh.unit_square(4)
    w = fem.basis_integrals(mesh)
    mass = fem.assemble_mass(mesh)
    stiff = fem.assemble_stiffness(mesh).tocsr()
    problem = reduced.DiscreteProblem(
        residual=lambda yv, q: stiff @ yv + w * yv**3 - mass @ q,
        state_jacobian=lambda yv, q: stiff + sp.diags(3.0 * w * yv**2),
        design_jacobian=lambda yv, q: -mass,
        cost=lambda yv, q: float(yv @ yv),
        cost_grad_state=lambda yv, q: 2.0 * yv,
        cost_grad_design=lambda yv, q: np.zeros(mesh.n_nodes),
        state_dim=mesh.n_nodes,
        design_dim=mesh.n_nodes,
    )
    rng = np.random.default_rng(7)
    y = rng.standard_normal(mesh.n_nodes)
    q = rng.standard_normal(mesh.n_nodes)
    steps = np.logspace(-1, -4, 7)
    report = reduced.verify_derivatives(problem, y, q, n_directions=2, steps=steps, seed=2)
    errs = report.errors["dR/dy"]
    slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert slope >= 1.0  # central differences actually give ~2


def test_fd_zero_direction_is_zero(poisson_control_16):
    mesh, functional, problem, _ = poisson_control_16
    q = np.zeros(mesh.n_nodes)
    functional.evaluate(q)
    _, vals = reduced.fd_directional(functional.evaluate, q, np.zeros(mesh.n_nodes),
                                     steps=[1e-3, 1e-5])
    assert np.array_equal(vals, np.zeros(2))


def test_design_jacobian_transpose_contract(poisson_control_16, rng):
    mesh, functional, problem, _ = poisson_control_16
    q = rng.standard_normal(mesh.n_nodes)
    y = problem.solve_state(q)
    jac_q = problem.design_jacobian(y, q)
    d = rng.standard_normal(mesh.n_nodes)
    p = rng.standard_normal(mesh.n_nodes)
    assert float((jac_q @ d) @ p) == pytest.approx(float(d @ (jac_q.T @ p)), rel=1e-12)


def test_scalar_product_changes_representative_not_stationarity():
    a = np.array([0.2, -0.4])
    spd = sp.csr_matrix(np.array([[2.0, 0.3], [0.3, 1.0]]))

    def make(problem_product):
        problem = reduced.DiscreteProblem(
            residual=lambda yv, q: yv,
            state_jacobian=lambda yv, q: sp.identity(1, format="csr"),
            design_jacobian=lambda yv, q: sp.csr_matrix((1, 2)),
            cost=lambda yv, q: 0.5 * float((q - a) @ (q - a)),
            cost_grad_state=lambda yv, q: np.zeros(1),
            cost_grad_design=lambda yv, q: q - a,
            state_dim=1,
            design_dim=2,
            linear_state=True,
        )
        return reduced.ReducedFunctional(problem, design_product=problem_product)

    q = np.array([1.0, 1.0])
    f_euclid, f_spd = make(None), make(spd)
    f_euclid.evaluate(q)
    f_spd.evaluate(q)
    g_euclid = f_euclid.gradient(q)
    g_spd = f_spd.gradient(q)
    assert not np.allclose(g_euclid, g_spd)  # different representatives
    # at a Euclidean-zero gradient point every representative vanishes
    f_euclid.evaluate(a.copy())
    f_spd.evaluate(a.copy())
    assert np.linalg.norm(f_euclid.gradient(a.copy())) <= 1e-14
    assert np.linalg.norm(f_spd.gradient(a.copy())) <= 1e-13
