"""Named demo problems behind the CLI: builders, runners, and gradient checks.

Each demo consumes a flat parameter dict (already merged with defaults by the
CLI), runs deterministically, and reports its history as CSV rows plus a one
line summary.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import constraints, fem, flow, optimize, reduced, shapeopt, spacemapping, topopt
from .linesearch import LineSearchConfig
from .mesh import Mesh2D, disk, unit_square, write_vtk
from .optimize import OptimizerConfig


def _linesearch_config(params) -> LineSearchConfig:
    return LineSearchConfig(
        method=params.get("linesearch", "armijo"),
        c1=params.get("c1", 1e-4),
        shrink=params.get("shrink", 0.5),
        alpha0=params.get("alpha0", 1.0),
        max_trials=params.get("max_trials", 30),
    )


def _optimizer_config(params, **overrides) -> OptimizerConfig:
    merged = dict(params)
    merged.update(overrides)
    return OptimizerConfig(
        algorithm=merged.get("algorithm", "lbfgs"),
        rtol=merged.get("rtol", 1e-3),
        atol=merged.get("atol", 0.0),
        max_iter=merged.get("max_iter", 100),
        lbfgs_memory=merged.get("lbfgs_memory", 5),
        linesearch=_linesearch_config(merged),
    )


class DemoResult:
    def __init__(self, header, rows, summary, converged, final_fields=None):
        self.header = header
        self.rows = rows
        self.summary = summary
        self.converged = converged
        self.final_fields = final_fields or {}  # name -> (mesh, point_data) for VTK


# -- poisson_control ---------------------------------------------------------------


def build_poisson_control(resolution: int = 16, alpha: float = 1e-4):
    """Reduced functional of the distributed Poisson control problem.

    min 1/2 ||y - y_d||_L2^2 + alpha/2 ||u||_L2^2  s.t.  -Lap(y) = u, y = 0 on
    the boundary; y_d is the state of a reference control, so the misfit is
    exactly attainable up to regularization.
    """
    mesh = unit_square(resolution)
    stiff = fem.assemble_stiffness(mesh)
    mass = fem.assemble_mass(mesh)
    bcs = [fem.DirichletBC(mk, 0.0) for mk in (1, 2, 3, 4)]
    idx, _ = fem.dirichlet_values(mesh, bcs)
    a_bc, _ = fem.eliminate(stiff, np.zeros(mesh.n_nodes), idx)
    free = np.ones(mesh.n_nodes)
    free[idx] = 0.0
    em = (sp.diags(free) @ mass).tocsr()

    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    u_ref = np.sin(np.pi * x) * np.sin(np.pi * y)
    y_d = fem.solve(a_bc, em @ u_ref)

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
    return mesh, functional, problem, y_d


class PoissonControlDemo:
    header = ["iter", "cost", "grad_norm", "step"]

    def __init__(self, params: dict):
        self.params = params
        self.mesh, self.functional, self.problem, self.y_d = build_poisson_control(
            params.get("resolution", 16), params.get("alpha", 1e-4)
        )
        self.opt_cfg = _optimizer_config(params)

    def run(self, vtk_dir=None) -> DemoResult:
        q0 = np.zeros(self.mesh.n_nodes)
        result = optimize.minimize(self.functional, q0, self.opt_cfg)
        rows = [(r.iteration, r.cost, r.grad_norm, r.step) for r in result.history]
        last = result.history[-1]
        summary = (f"poisson_control: cost={last.cost:.6e} grad_norm={last.grad_norm:.3e} "
                   f"iterations={last.iteration} converged={result.converged}")
        fields = {}
        if vtk_dir is not None:
            state = self.functional.last_state
            fields["final"] = (self.mesh, {"control": result.q, "state": state,
                                           "desired": self.y_d})
        return DemoResult(self.header, rows, summary, result.converged, fields)

    def gradient_check(self, corrupt: bool = False, seed: int = 0):
        rng = np.random.default_rng(seed)
        q = rng.standard_normal(self.mesh.n_nodes) * 0.1
        self.functional.evaluate(q)
        g = self.functional.gradient(q)
        if corrupt:
            g = 1.01 * g
        d = rng.standard_normal(self.mesh.n_nodes)
        d /= np.linalg.norm(d)
        adj = self.functional.inner(g, d)
        steps, vals = reduced.fd_directional(self.functional.evaluate, q, d)
        errs = np.abs(vals - adj) / max(abs(adj), 1e-300)
        lines = [f"  step {h:9.1e}   fd {v:+.12e}   rel err {e:.3e}"
                 for h, v, e in zip(steps, vals, errs)]
        lines.append(f"adjoint directional derivative: {adj:+.12e}")
        return lines, float(errs.min())


# -- shape_poisson -----------------------------------------------------------------


def shape_source(x, y):
    return 2.5 * (x + 0.4 - y**2) ** 2 + x**2 + y**2 - 1.0


def shape_source_gradient(x, y):
    gx = 5.0 * (x + 0.4 - y**2) + 2.0 * x
    gy = -10.0 * y * (x + 0.4 - y**2) + 2.0 * y
    return np.column_stack([gx, gy])


def build_shape_poisson(rings: int = 12):
    mesh = disk(rings)
    problem = shapeopt.PoissonShapeFunctional(shape_source, shape_source_gradient)
    return mesh, problem


class ShapePoissonDemo:
    header = ["iter", "cost", "grad_norm", "step", "min_quality"]

    def __init__(self, params: dict):
        self.params = params
        self.mesh, self.problem = build_shape_poisson(params.get("rings", 12))
        inner = params.get("inner_product", "h1")
        self.grad_cfg = shapeopt.ShapeGradientConfig(
            inner_product=inner,
            p=params.get("p", 4.0),
            eps=params.get("eps", 1e-8),
            mu=params.get("mu", 1.0),
            lam=params.get("lam", 0.0),
            fixed_markers=tuple(params.get("fixed_markers", ())),
        )
        self.opt_cfg = _optimizer_config(params, max_iter=params.get("max_iter", 50),
                                         alpha0=params.get("alpha0", 0.5))
        self.quality_threshold = params.get("quality_threshold", 0.1)

    def run(self, vtk_dir=None) -> DemoResult:
        result = shapeopt.optimize_shape(self.problem, self.mesh, self.grad_cfg,
                                         self.opt_cfg, self.quality_threshold,
                                         vtk_dir=vtk_dir)
        rows = [(r.iteration, r.cost, r.grad_norm, r.step, r.quality) for r in result.history]
        last = result.history[-1]
        summary = (f"shape_poisson[{self.grad_cfg.inner_product}]: cost={last.cost:.6e} "
                   f"grad_norm={last.grad_norm:.3e} min_quality={last.quality:.3f} "
                   f"iterations={last.iteration} converged={result.converged}")
        fields = {}
        if vtk_dir is not None:
            state = self.problem.solve_state(result.mesh)
            fields["final"] = (result.mesh, {"state": state})
        return DemoResult(self.header, rows, summary, result.converged, fields)

    def gradient_check(self, corrupt: bool = False, seed: int = 0):
        rng = np.random.default_rng(seed)
        mesh = self.mesh
        y = self.problem.solve_state(mesh)
        p = self.problem.solve_adjoint(mesh, y)
        dj = shapeopt.shape_derivative(self.problem, mesh, y, p)
        if corrupt:
            dj = 1.01 * dj
        nodes = mesh.nodes

        def smooth_field():
            c = rng.standard_normal(8) * 0.5
            vx = c[0] + c[1] * nodes[:, 0] + c[2] * nodes[:, 1] \
                + c[3] * np.sin(np.pi * nodes[:, 0]) * np.cos(np.pi * nodes[:, 1])
            vy = c[4] + c[5] * nodes[:, 0] + c[6] * nodes[:, 1] \
                + c[7] * np.cos(np.pi * nodes[:, 0]) * np.sin(np.pi * nodes[:, 1])
            return np.column_stack([vx, vy])

        def cost_at(t, field):
            trial = Mesh2D(nodes + t * field, mesh.triangles, mesh.boundary_edges,
                           mesh.boundary_markers)
            return self.problem.cost(trial, self.problem.solve_state(trial))

        lines = []
        best_overall = 0.0
        for k in range(self.params.get("fields", 3)):
            field = smooth_field()
            pred = shapeopt.derivative_apply(dj, field)
            best = np.inf
            for t in np.logspace(-3, -7, 9):
                fd = (cost_at(t, field) - cost_at(-t, field)) / (2.0 * t)
                best = min(best, abs(fd - pred) / max(abs(fd), 1e-300))
            lines.append(f"  field {k}: dJ[V] {pred:+.9e}   best rel err {best:.3e}")
            best_overall = max(best_overall, best)
        return lines, float(best_overall)


# -- topopt_source -----------------------------------------------------------------


class TopOptSourceDemo:
    header = ["iter", "cost", "theta_deg", "kappa"]

    def __init__(self, params: dict):
        self.params = params
        self.mesh = unit_square(params.get("resolution", 16))
        self.problem = topopt.SourceIdentificationProblem(
            self.mesh,
            f_inside=params.get("f_inside", 10.0),
            f_outside=params.get("f_outside", 1.0),
        )
        self.cfg = topopt.TopOptConfig(
            kappa_init=params.get("kappa_init", 1.0),
            kappa_min=params.get("kappa_min", 1e-4),
            theta_tol_deg=params.get("theta_tol_deg", 1.0),
            max_iter=params.get("max_iter", 100),
            algorithm=params.get("algorithm", "convex_combination"),
            memory=params.get("memory", 5),
        )

    def initial_level_set(self):
        return topopt.normalize(self.problem.mass, np.ones(self.mesh.n_nodes))

    def run(self, vtk_dir=None) -> DemoResult:
        psi0 = self.initial_level_set()
        solver = (topopt.quasi_newton_solve if self.cfg.algorithm == "quasi_newton"
                  else topopt.solve)
        result = solver(self.problem, psi0, self.problem.topological_derivative, self.cfg)
        rows = [(r.iteration, r.cost, r.theta_deg, r.kappa) for r in result.history]
        last = result.history[-1]
        summary = (f"topopt_source[{self.cfg.algorithm}]: cost={last.cost:.6e} "
                   f"theta={last.theta_deg:.3f}deg iterations={last.iteration} "
                   f"converged={result.converged}")
        fields = {}
        if vtk_dir is not None:
            indicator = topopt.material_indicator(self.mesh, result.psi)
            nodal_ind = np.zeros(self.mesh.n_nodes)
            np.add.at(nodal_ind, self.mesh.triangles.ravel(),
                      np.repeat(indicator.astype(float), 3))
            fields["final"] = (self.mesh, {"level_set": result.psi,
                                           "material": (nodal_ind > 0).astype(float)})
        return DemoResult(self.header, rows, summary, result.converged, fields)


# -- constrained_control -----------------------------------------------------------


class ConstrainedControlDemo:
    """Poisson control with an integral state constraint int y dx = target."""

    header = ["iter", "cost", "mu", "max_violation", "inner_iterations"]

    def __init__(self, params: dict):
        self.params = params
        self.mesh, self.functional, self.problem, self.y_d = build_poisson_control(
            params.get("resolution", 16), params.get("alpha", 1e-4)
        )
        mass = self.functional.design_product
        c_vec = fem.basis_integrals(self.mesh)
        target = params.get("volume_target")
        if target is None:
            target = 0.5 * float(c_vec @ self.y_d)
        self.target = target

        constraint_problem = reduced.DiscreteProblem(
            residual=self.problem.residual,
            state_jacobian=self.problem.state_jacobian,
            design_jacobian=self.problem.design_jacobian,
            cost=lambda yv, q: float(c_vec @ yv) - target,
            cost_grad_state=lambda yv, q: c_vec,
            cost_grad_design=lambda yv, q: np.zeros(self.mesh.n_nodes),
            state_dim=self.mesh.n_nodes,
            design_dim=self.mesh.n_nodes,
            linear_state=True,
        )
        c_functional = reduced.ReducedFunctional(constraint_problem, design_product=mass)
        self.constraint = constraints.ConstraintSpec(
            kind=params.get("constraint_kind", "eq"),
            func=c_functional.evaluate,
            grad=c_functional.gradient,
        )
        self.cfg = constraints.OuterLoopConfig(
            mu0=params.get("mu0", 1.0),
            growth=params.get("growth", 10.0),
            tol_feas=params.get("tol_feas", 1e-5),
            progress_ratio=params.get("progress_ratio", 0.25),
            max_outer=params.get("max_outer", 25),
            inner=_optimizer_config(params, rtol=params.get("rtol", 1e-4),
                                    max_iter=params.get("max_iter", 100)),
        )
        self.method = params.get("outer_method", "al")

    def run(self, vtk_dir=None) -> DemoResult:
        q0 = np.zeros(self.mesh.n_nodes)
        if self.method == "penalty":
            result = constraints.quadratic_penalty_solve(
                self.functional, [self.constraint], q0, self.cfg)
        else:
            result = constraints.augmented_lagrangian_solve(
                self.functional, [self.constraint], q0, self.cfg)
        rows = [(r.outer_iteration, r.cost, r.mu, r.max_violation, r.inner_iterations)
                for r in result.history]
        last = result.history[-1]
        summary = (f"constrained_control[{self.method}]: cost={last.cost:.6e} "
                   f"violation={last.max_violation:.3e} outer_iterations={last.outer_iteration} "
                   f"feasible={result.feasible} converged={result.converged}")
        fields = {}
        if vtk_dir is not None:
            fields["final"] = (self.mesh, {"control": result.q})
        return DemoResult(self.header, rows, summary, result.converged, fields)

    def gradient_check(self, corrupt: bool = False, seed: int = 0):
        rng = np.random.default_rng(seed)
        q = rng.standard_normal(self.mesh.n_nodes) * 0.1
        self.functional.evaluate(q)
        g = self.functional.gradient(q)
        if corrupt:
            g = 1.01 * g
        d = rng.standard_normal(self.mesh.n_nodes)
        d /= np.linalg.norm(d)
        adj = self.functional.inner(g, d)
        steps, vals = reduced.fd_directional(self.functional.evaluate, q, d)
        errs = np.abs(vals - adj) / max(abs(adj), 1e-300)
        lines = [f"  step {h:9.1e}   rel err {e:.3e}" for h, e in zip(steps, errs)]
        return lines, float(errs.min())


# -- space mapping: flow analog ----------------------------------------------------


class SpaceMappingFlowDemo:
    header = ["iter", "cost", "p_dist", "fine_evals"]

    def __init__(self, params: dict):
        self.params = params
        self.resolution = params.get("resolution", 1)
        self.cfg = spacemapping.SpaceMappingConfig(
            tol=params.get("tol", 5e-3), max_iter=params.get("max_iter", 25)
        )

    def run(self, vtk_dir=None) -> DemoResult:
        fine, coarse, fine_model, rates_log, validator = flow.build_flow_pair(self.resolution)
        result = spacemapping.solve(fine, coarse, self.cfg, validator=validator)
        rows = []
        for rec, rates in zip(result.history, rates_log):
            rows.append((rec.iteration, flow.imbalance_cost(rates), rec.distance,
                         rec.fine_evaluations))
        final_rates = rates_log[len(result.history) - 1]
        imbalance = float(np.abs(final_rates - final_rates.mean()).max()
                          / abs(final_rates.mean()))
        summary = (f"spacemapping_flow: imbalance={100*imbalance:.3f}% "
                   f"rates=({', '.join(f'{r:.5f}' for r in final_rates)}) "
                   f"iterations={result.iterations} fine_evals={result.fine_evaluations} "
                   f"converged={result.converged}")
        fields = {}
        if vtk_dir is not None:
            mesh, u = fine_model.potential_field(result.x)
            fields["final"] = (mesh, {"potential": u})
        return DemoResult(self.header, rows, summary, result.converged, fields)


# -- space mapping: semilinear control ---------------------------------------------


def gaussian_bumps(mesh: Mesh2D, centers, sigma: float) -> np.ndarray:
    """(n_nodes, n_bumps) matrix of Gaussian source basis functions."""
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    cols = [np.exp(-(((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * sigma**2)))
            for cx, cy in centers]
    return np.column_stack(cols)


def quadrant_weights(mesh: Mesh2D) -> np.ndarray:
    """(4, n_nodes) quadrature weights of int y dx over the four quadrants."""
    c = fem.basis_integrals(mesh)
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    quads = [
        (x <= 0.5) & (y <= 0.5),
        (x > 0.5) & (y <= 0.5),
        (x <= 0.5) & (y > 0.5),
        (x > 0.5) & (y > 0.5),
    ]
    return np.vstack([np.where(q, c, 0.0) for q in quads])


BUMP_CENTERS = ((0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75))


class SemilinearFine:
    """-Lap(y) + y^3 = sum_j x_j bump_j, responses are quadrant integrals of y."""

    def __init__(self, resolution: int = 16, sigma: float = 0.12):
        self.mesh = unit_square(resolution)
        self.bumps = gaussian_bumps(self.mesh, BUMP_CENTERS, sigma)
        self.weights = quadrant_weights(self.mesh)
        self.bcs = [fem.DirichletBC(mk, 0.0) for mk in (1, 2, 3, 4)]

    def response(self, x: np.ndarray) -> np.ndarray:
        source = self.bumps @ np.asarray(x, dtype=float)
        y = fem.solve_semilinear(self.mesh, lambda v: v**3, lambda v: 3.0 * v**2,
                                 source, self.bcs, tol=1e-11)
        return self.weights @ y


class SemilinearCoarse(spacemapping.CoarseModel):
    """Linear Poisson surrogate on a coarser mesh; its response is exactly C z."""

    def __init__(self, target: np.ndarray, resolution: int = 8, sigma: float = 0.12):
        self.mesh = unit_square(resolution)
        self.target = np.asarray(target, dtype=float)
        bumps = gaussian_bumps(self.mesh, BUMP_CENTERS, sigma)
        weights = quadrant_weights(self.mesh)
        stiff = fem.assemble_stiffness(self.mesh)
        bcs = [fem.DirichletBC(mk, 0.0) for mk in (1, 2, 3, 4)]
        idx, _ = fem.dirichlet_values(self.mesh, bcs)
        a_bc, _ = fem.eliminate(stiff, np.zeros(self.mesh.n_nodes), idx)
        cols = []
        for j in range(bumps.shape[1]):
            b = fem.load_vector(self.mesh, bumps[:, j])
            b[idx] = 0.0
            cols.append(weights @ fem.solve(a_bc, b))
        self.c_matrix = np.column_stack(cols)

    def response(self, z: np.ndarray) -> np.ndarray:
        return self.c_matrix @ np.asarray(z, dtype=float)

    def response_jacobian(self, z: np.ndarray) -> np.ndarray:
        return self.c_matrix

    def optimize(self) -> np.ndarray:
        class Fit:
            def __init__(self, c, r):
                self.c, self.r = c, r

            def evaluate(self, z):
                d = self.c @ z - self.r
                return 0.5 * float(d @ d)

            def gradient(self, z):
                return self.c.T @ (self.c @ z - self.r)

            def inner(self, a, b):
                return float(a @ b)

            def norm(self, a):
                return float(np.linalg.norm(a))

        cfg = OptimizerConfig(algorithm="lbfgs", rtol=1e-10, atol=1e-14, max_iter=200,
                              linesearch=LineSearchConfig(method="polynomial"))
        return optimize.minimize(Fit(self.c_matrix, self.target), np.zeros(4), cfg).q


class SpaceMappingSemilinearDemo:
    header = ["iter", "cost", "p_dist", "fine_evals"]

    def __init__(self, params: dict):
        self.params = params
        self.fine_resolution = params.get("fine_resolution", 16)
        self.coarse_resolution = params.get("coarse_resolution", 8)
        self.sigma = params.get("sigma", 0.12)
        self.reference = np.asarray(params.get("reference_design", (30.0, 10.0, 20.0, 40.0)),
                                    dtype=float)
        self.cfg = spacemapping.SpaceMappingConfig(
            tol=params.get("tol", 1e-3), max_iter=params.get("max_iter", 25)
        )

    def run(self, vtk_dir=None) -> DemoResult:
        fine_impl = SemilinearFine(self.fine_resolution, self.sigma)
        target = fine_impl.response(self.reference)  # generated before instrumentation
        coarse = SemilinearCoarse(target, self.coarse_resolution, self.sigma)
        fine = spacemapping.FineModel(fine_impl.response)
        result = spacemapping.solve(fine, coarse, self.cfg)
        rows = [(rec.iteration, 0.5 * float((rec.response - target) @ (rec.response - target)),
                 rec.distance, rec.fine_evaluations) for rec in result.history]
        design_err = float(np.linalg.norm(result.x - self.reference)
                           / np.linalg.norm(self.reference))
        summary = (f"spacemapping_semilinear: target_misfit={rows[-1][1]:.3e} "
                   f"design_rel_err={design_err:.3e} iterations={result.iterations} "
                   f"fine_evals={result.fine_evaluations} converged={result.converged}")
        fields = {}
        if vtk_dir is not None:
            source = fine_impl.bumps @ result.x
            y = fem.solve_semilinear(fine_impl.mesh, lambda v: v**3, lambda v: 3.0 * v**2,
                                     source, fine_impl.bcs, tol=1e-11)
            fields["final"] = (fine_impl.mesh, {"state": y, "source": source})
        return DemoResult(self.header, rows, summary, result.converged, fields)


REGISTRY = {
    "poisson_control": PoissonControlDemo,
    "shape_poisson": ShapePoissonDemo,
    "topopt_source": TopOptSourceDemo,
    "constrained_control": ConstrainedControlDemo,
    "spacemapping_flow": SpaceMappingFlowDemo,
    "spacemapping_semilinear": SpaceMappingSemilinearDemo,
}

GRADIENT_CHECK_PROBLEMS = ("poisson_control", "shape_poisson", "constrained_control")
