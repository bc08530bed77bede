"""Shape optimization: volume-form shape derivatives, shape gradients under
selectable scalar products (H1, linear elasticity, p-Laplace), and the
deform-and-check descent loop with a mesh-quality guard.

The shape derivative is assembled in the distributed (volume) form, which for
P1 elements is the exact derivative of the discrete cost with respect to mesh
node positions; finite-difference checks therefore reach solver precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem, linesearch
from .mesh import Mesh2D, MeshInversionError, deform, min_quality, signed_areas, write_vtk
from .optimize import IterationRecord, OptimizerConfig

_MASS_BASE = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


class QualityLockError(RuntimeError):
    """Step halving hit underflow while blocked by mesh quality or inversion."""

    def __init__(self, triangle: int | None):
        detail = f"triangle {triangle}" if triangle is not None else "no specific triangle"
        super().__init__(f"shape step underflow below 1e-12; blocking element: {detail}")
        self.triangle = triangle


@dataclass
class ShapeGradientConfig:
    """Scalar product used to turn the shape derivative into a gradient field.

    fixed_markers lists boundary markers whose nodes stay put (zero
    displacement).  The elasticity and custom products need enough fixed nodes
    to remove rigid motions; the translation-invariant part of the p-Laplace
    and pure-stiffness operators is handled by constant deflation when nothing
    is fixed.
    """

    inner_product: str = "h1"  # "h1" | "elasticity" | "p_laplace" | "custom"
    mu: float = 1.0
    lam: float = 0.0
    p: float = 4.0
    eps: float = 1e-8
    fixed_markers: tuple = ()
    matrix: sp.spmatrix | None = None

    def __post_init__(self):
        if self.inner_product not in ("h1", "elasticity", "p_laplace", "custom"):
            raise ValueError(f"unknown inner product {self.inner_product!r}")
        if self.p < 2.0:
            raise ValueError("p-Laplace exponent must be >= 2")
        if self.eps <= 0.0:
            raise ValueError("p-Laplace regularization must be positive")
        if self.inner_product == "custom" and self.matrix is None:
            raise ValueError("custom inner product requires a matrix")


@dataclass
class PoissonShapeFunctional:
    """Shipped demo: J(Omega) = int y dx with -Lap(y) = f, y = 0 on the boundary.

    f and grad_f are vectorized callables of node coordinate arrays; grad_f is
    needed because moving mesh nodes re-samples the source term.
    """

    f: callable
    grad_f: callable
    dirichlet_markers: tuple = (1,)

    def _system(self, mesh: Mesh2D):
        a = fem.assemble_stiffness(mesh)
        f_nodal = np.asarray(self.f(mesh.nodes[:, 0], mesh.nodes[:, 1]), dtype=float)
        b = fem.load_vector(mesh, f_nodal)
        bcs = [fem.DirichletBC(mk, 0.0) for mk in self.dirichlet_markers]
        a_bc, b_bc, idx = fem.apply_dirichlet(a, b, mesh, bcs)
        return a_bc, b_bc, idx

    def solve_state(self, mesh: Mesh2D) -> np.ndarray:
        a_bc, b_bc, _ = self._system(mesh)
        return fem.solve(a_bc, b_bc)

    def cost(self, mesh: Mesh2D, state: np.ndarray) -> float:
        return float(fem.basis_integrals(mesh) @ state)

    def solve_adjoint(self, mesh: Mesh2D, state: np.ndarray) -> np.ndarray:
        a_bc, _, idx = self._system(mesh)
        rhs = -fem.basis_integrals(mesh)
        rhs[idx] = 0.0
        return fem.solve(a_bc, rhs)

    def derivative(self, mesh: Mesh2D, state: np.ndarray, adjoint: np.ndarray) -> np.ndarray:
        """Nodal covector of the volume-form derivative dJ(Omega)[V].

        dJ[V] = int divV (y - f p) + [divV I - (gradV + gradV^T)] grad y . grad p
                      - (grad f . V) p dx
        with the source interpolated nodally, so the expression is the exact
        derivative of the discrete cost under node motion.
        """
        tri = mesh.triangles
        areas, grads = fem.triangle_gradients(mesh)
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        f_nodal = np.asarray(self.f(x, y), dtype=float)
        gf_nodal = np.asarray(self.grad_f(x, y), dtype=float)

        y_e, p_e, f_e = state[tri], adjoint[tri], f_nodal[tri]
        grad_y = np.einsum("tmd,tm->td", grads, y_e)
        grad_p = np.einsum("tmd,tm->td", grads, p_e)
        gyp = np.einsum("td,td->t", grad_y, grad_p)

        mass_p = areas[:, None] * (p_e @ _MASS_BASE.T)  # (t, 3): int_T phi_m p
        int_y = areas / 3.0 * y_e.sum(axis=1)
        int_fp = np.einsum("tm,tm->t", f_e, mass_p)

        div_coeff = int_y - int_fp + areas * gyp  # multiplies div V
        contrib = grads * div_coeff[:, None, None]
        gy_m = np.einsum("tmd,td->tm", grads, grad_y)
        gp_m = np.einsum("tmd,td->tm", grads, grad_p)
        contrib -= areas[:, None, None] * (
            gy_m[:, :, None] * grad_p[:, None, :] + gp_m[:, :, None] * grad_y[:, None, :]
        )
        contrib -= mass_p[:, :, None] * gf_nodal[tri]

        cov = np.zeros_like(mesh.nodes)
        np.add.at(cov, tri, contrib)
        return cov


def shape_derivative(problem, mesh: Mesh2D, state: np.ndarray, adjoint: np.ndarray) -> np.ndarray:
    """Assembled nodal covector of dJ(Omega)[V] for P1 deformation fields."""
    return problem.derivative(mesh, state, adjoint)


def volume_derivative(mesh: Mesh2D) -> np.ndarray:
    """Covector of d(int_Omega 1 dx)[V] = int div V dx."""
    areas, grads = fem.triangle_gradients(mesh)
    cov = np.zeros_like(mesh.nodes)
    np.add.at(cov, mesh.triangles, grads * areas[:, None, None])
    return cov


def derivative_apply(derivative: np.ndarray, field_values: np.ndarray) -> float:
    """Evaluate the assembled covector on a nodal vector field."""
    return float(np.sum(derivative * field_values))


def assemble_elasticity(mesh: Mesh2D, mu: float, lam: float) -> sp.csr_matrix:
    """Vector P1 operator int 2 mu eps(V):eps(W) + lam div V div W.

    Degrees of freedom are stacked: x components first, then y components.
    """
    n = mesh.n_nodes
    areas, grads = fem.triangle_gradients(mesh)
    bx, by = grads[:, :, 0], grads[:, :, 1]
    z = np.zeros_like(bx)
    # Engineering-strain B matrix rows (exx, eyy, gxy) per element, (t, 3, 6)
    b_mat = np.stack(
        [
            np.concatenate([bx, z], axis=1),
            np.concatenate([z, by], axis=1),
            np.concatenate([by, bx], axis=1),
        ],
        axis=1,
    )
    d_mat = np.array(
        [[2.0 * mu + lam, lam, 0.0], [lam, 2.0 * mu + lam, 0.0], [0.0, 0.0, mu]]
    )
    local = np.einsum("t,tri,rs,tsj->tij", areas, b_mat, d_mat, b_mat)
    dofs = np.concatenate([mesh.triangles, mesh.triangles + n], axis=1)  # (t, 6)
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(2 * n, 2 * n)).tocsr()


def _fixed_nodes(mesh: Mesh2D, markers) -> np.ndarray:
    if not markers:
        return np.zeros(0, dtype=np.int64)
    return mesh.nodes_on(list(markers))


def _solve_componentwise(op: sp.csr_matrix, rhs: np.ndarray, fixed: np.ndarray,
                         deflate_constants: bool) -> np.ndarray:
    """Solve op V_c = rhs[:, c] per component with fixed nodes eliminated.

    With no fixed nodes and a constant-kernel operator, the right-hand side is
    projected onto zero mean and one node is pinned; the returned component is
    shifted back to zero mean (translations carry no information then).
    """
    n = op.shape[0]
    out = np.zeros_like(rhs)
    for c in range(rhs.shape[1]):
        b = rhs[:, c].copy()
        if fixed.size:
            a_bc, b_bc = fem.eliminate(op, b, fixed)
            out[:, c] = fem.solve(a_bc, b_bc)
        elif deflate_constants:
            b -= b.mean()
            a_bc, b_bc = fem.eliminate(op, b, np.array([0]))
            x = fem.solve(a_bc, b_bc)
            out[:, c] = x - x.mean()
        else:
            out[:, c] = fem.solve(op, b)
    return out


def shape_gradient(derivative: np.ndarray, mesh: Mesh2D, cfg: ShapeGradientConfig) -> np.ndarray:
    """Riesz representative V of -dJ under the configured inner product.

    Solves a(V, W) = -dJ[W] for all test fields W vanishing on fixed markers;
    the result is a descent deformation: dJ[V] = -a(V, V) <= 0.
    """
    if cfg.inner_product == "p_laplace":
        return p_laplace_gradient(derivative, mesh, cfg.p, cfg.eps, cfg.fixed_markers)

    fixed = _fixed_nodes(mesh, cfg.fixed_markers)
    rhs = -derivative
    if cfg.inner_product == "h1":
        op = (fem.assemble_stiffness(mesh) + fem.assemble_mass(mesh)).tocsr()
        return _solve_componentwise(op, rhs, fixed, deflate_constants=False)

    n = mesh.n_nodes
    if cfg.inner_product == "elasticity":
        if fixed.size == 0:
            raise ValueError("the elasticity product needs fixed markers to remove rigid motions")
        op = assemble_elasticity(mesh, cfg.mu, cfg.lam)
    else:  # custom SPD matrix in stacked (x, y) ordering
        op = sp.csr_matrix(cfg.matrix)
        if op.shape != (2 * n, 2 * n):
            raise ValueError(f"custom matrix must be ({2*n}, {2*n}), got {op.shape}")
    fixed_dofs = np.concatenate([fixed, fixed + n])
    b = np.concatenate([rhs[:, 0], rhs[:, 1]])
    a_bc, b_bc = fem.eliminate(op, b, fixed_dofs)
    sol = fem.solve(a_bc, b_bc)
    return np.column_stack([sol[:n], sol[n:]])


def p_laplace_gradient(derivative: np.ndarray, mesh: Mesh2D, p: float, eps: float = 1e-8,
                       fixed_markers=()) -> np.ndarray:
    """Descent field from int (eps + |grad V|^2)^((p-2)/2) grad V : grad W dx = -dJ[W].

    Solved by freezing the coefficient and iterating linear solves to relative
    update 1e-8 (at most 50 sweeps).  Each sweep direction is a preconditioned
    negative gradient of the convex energy int (eps + |grad V|^2)^(p/2) / p
    + dJ[V], so the sweeps are damped by energy backtracking, which makes the
    frozen-coefficient iteration globally convergent for p > 2.  p = 2 reduces
    to the pure-stiffness (gradient-only) product.
    """
    if p < 2.0:
        raise ValueError("p-Laplace exponent must be >= 2")
    fixed = _fixed_nodes(mesh, fixed_markers)
    rhs = -derivative
    deflate = fixed.size == 0
    stiff = fem.assemble_stiffness(mesh)
    v = _solve_componentwise(stiff, rhs, fixed, deflate)
    translation = np.zeros(2)
    if deflate:
        # The operator is translation-invariant, so with nothing fixed the mean
        # displacement is undetermined; take the L2 steepest-descent translation
        # (the same treatment constants get from the H1 product's mass term).
        area = float(np.sum(mesh.signed_areas()))
        translation = -derivative.sum(axis=0) / area
    if p == 2.0:
        return v + translation

    areas, grads = fem.triangle_gradients(mesh)
    tri = mesh.triangles

    def grad_sq(field):
        g = np.einsum("tmd,tmc->tdc", grads, field[tri])
        return np.einsum("tdc,tdc->t", g, g)

    def energy(field):
        bulk = np.sum(areas / p * (eps + grad_sq(field)) ** (p / 2.0))
        return bulk + float(np.sum(derivative * field))

    # Scale the p=2 field to its energy-optimal multiple before iterating;
    # the raw field can be off by orders of magnitude for p > 2.
    gsq = grad_sq(v)
    slope_lin = float(np.sum(derivative * v))

    def denergy_of_scale(c):
        return float(np.sum(areas * (eps + c * c * gsq) ** ((p - 2.0) / 2.0) * c * gsq)) + slope_lin

    if slope_lin < 0.0:
        c_hi = 1.0
        while denergy_of_scale(c_hi) < 0.0 and c_hi < 1e12:
            c_hi *= 2.0
        c_lo = 0.0
        for _ in range(200):
            c_mid = 0.5 * (c_lo + c_hi)
            if denergy_of_scale(c_mid) < 0.0:
                c_lo = c_mid
            else:
                c_hi = c_mid
        v = 0.5 * (c_lo + c_hi) * v

    e_cur = energy(v)
    rel = np.inf
    for _ in range(50):
        weight = (eps + grad_sq(v)) ** ((p - 2.0) / 2.0)
        op = fem.assemble_stiffness(mesh, weight)
        v_hat = _solve_componentwise(op, rhs, fixed, deflate)
        delta = v_hat - v
        # energy slope along delta: (A_k v - b) . delta = -delta^T A_k delta
        a_delta = np.einsum("tmd,tmc->tdc", grads, delta[tri])
        slope = -float(np.sum(areas * weight * np.einsum("tdc,tdc->t", a_delta, a_delta)))
        s = 1.0
        while s > 2.0**-60:
            v_trial = v + s * delta
            e_trial = energy(v_trial)
            if e_trial <= e_cur + 1e-4 * s * slope:
                break
            s *= 0.5
        else:
            raise fem.SolverError("p-Laplace damping stagnated", float(rel))
        denom = max(np.linalg.norm(v_trial), 1e-300)
        rel = s * np.linalg.norm(delta) / denom
        v, e_cur = v_trial, e_trial
        if rel <= 1e-8:
            return v + translation
    raise fem.SolverError("p-Laplace fixed point did not converge", float(rel))


@dataclass
class ShapeOptResult:
    mesh: Mesh2D
    history: list[IterationRecord]
    converged: bool
    message: str = ""

    @property
    def iterations(self) -> int:
        return self.history[-1].iteration if self.history else 0

    @property
    def cost(self) -> float:
        return self.history[-1].cost


def optimize_shape(problem, mesh0: Mesh2D, grad_cfg: ShapeGradientConfig,
                   opt_cfg: OptimizerConfig, quality_threshold: float = 0.1,
                   vtk_dir=None) -> ShapeOptResult:
    """Gradient-descent loop over domains with a mesh-quality guard.

    Each iteration solves state and adjoint, assembles the volume-form shape
    derivative, computes the gradient deformation under grad_cfg, and line
    searches the step.  Trial steps are rejected (halved) when the deformation
    inverts an element or drops min_quality below the threshold; an accepted
    step additionally satisfies the Armijo inequality.
    """
    mesh = mesh0
    if min_quality(mesh) < quality_threshold:
        raise ValueError("initial mesh quality is below the threshold")

    def analyze(m):
        y = problem.solve_state(m)
        cost = problem.cost(m, y)
        adj = problem.solve_adjoint(m, y)
        dj = shape_derivative(problem, m, y, adj)
        v = shape_gradient(dj, m, grad_cfg)
        slope = derivative_apply(dj, v)
        gnorm = float(np.sqrt(max(-slope, 0.0)))
        return y, cost, dj, v, slope, gnorm

    y, cost, dj, v, slope, gnorm = analyze(mesh)
    history = [IterationRecord(0, cost, gnorm, 0.0, min_quality(mesh))]
    tol = max(opt_cfg.atol, opt_cfg.rtol * gnorm)
    ls = opt_cfg.linesearch
    prev_decrease = None
    if vtk_dir is not None:
        write_vtk(mesh, f"{vtk_dir}/shape_000000.vtk", {"state": y})

    for it in range(1, opt_cfg.max_iter + 1):
        if gnorm <= tol:
            return ShapeOptResult(mesh, history, True, "gradient tolerance reached")
        alpha = ls.alpha0
        if prev_decrease is not None and slope < 0.0:
            # initial trial repeating twice the previous decrease at this slope
            guess = 2.0 * prev_decrease / slope
            if np.isfinite(guess) and guess > 0.0:
                alpha = guess
        blocking = None
        accepted = False
        while alpha >= 1e-12:
            try:
                trial = deform(mesh, alpha * v)
            except MeshInversionError as err:
                blocking = err.triangle
                alpha *= ls.shrink
                continue
            quality = min_quality(trial)
            if quality < quality_threshold:
                areas = np.abs(signed_areas(trial.nodes, trial.triangles))
                blocking = int(np.argmin(areas))
                alpha *= ls.shrink
                continue
            y_t = problem.solve_state(trial)
            cost_t = problem.cost(trial, y_t)
            if linesearch.accepted(alpha, cost_t, cost, slope, ls.c1):
                accepted = True
                break
            alpha *= ls.shrink
        if not accepted:
            raise QualityLockError(blocking)

        prev_decrease = cost_t - cost
        mesh = trial
        y, cost, dj, v, slope, gnorm = analyze(mesh)
        history.append(IterationRecord(it, cost, gnorm, alpha, min_quality(mesh)))
        if vtk_dir is not None:
            write_vtk(mesh, f"{vtk_dir}/shape_{it:06d}.vtk", {"state": y})

    converged = gnorm <= tol
    msg = "gradient tolerance reached" if converged else "maximum iterations reached"
    return ShapeOptResult(mesh, history, converged, msg)
