"""Level-set topology optimization driven by user-supplied topological derivatives.

The level set lives on the unit sphere of L2 (mass-matrix norm): the material
region is {psi < 0}, updates rotate psi toward the normalized generalized
topological derivative, and the alignment angle theta is the optimality
measure.  A limited-memory quasi-Newton variant accelerates the fixed point
with a mandatory fallback to the plain sphere step.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .mesh import Mesh2D


class DegenerateDerivativeError(RuntimeError):
    """The topological derivative vanished; the angle is undefined."""


class AntipodalError(RuntimeError):
    """psi and the derivative are antipodal; the sphere step is undefined."""


@dataclass
class TopOptConfig:
    kappa_init: float = 1.0
    kappa_min: float = 1e-4
    theta_tol_deg: float = 1.0
    max_iter: int = 100
    algorithm: str = "convex_combination"  # or "quasi_newton"
    memory: int = 5

    def __post_init__(self):
        if not 0.0 < self.kappa_min <= self.kappa_init <= 1.0:
            raise ValueError("need 0 < kappa_min <= kappa_init <= 1")
        if self.algorithm not in ("convex_combination", "quasi_newton"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")


@dataclass
class TopOptRecord:
    iteration: int
    cost: float
    theta_deg: float
    kappa: float


@dataclass
class TopOptResult:
    psi: np.ndarray
    history: list[TopOptRecord]
    converged: bool
    message: str = ""

    @property
    def iterations(self) -> int:
        return self.history[-1].iteration if self.history else 0

    @property
    def cost(self) -> float:
        return self.history[-1].cost


def l2_inner(mass: sp.spmatrix, a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ (mass @ b))


def l2_norm(mass: sp.spmatrix, a: np.ndarray) -> float:
    return float(np.sqrt(max(l2_inner(mass, a, a), 0.0)))


def normalize(mass: sp.spmatrix, psi: np.ndarray) -> np.ndarray:
    n = l2_norm(mass, psi)
    if n == 0.0:
        raise ValueError("cannot normalize the zero level set")
    return psi / n


def angle(psi: np.ndarray, g: np.ndarray, mass: sp.spmatrix) -> float:
    """Alignment angle arccos(<psi, g> / (||psi|| ||g||)) in radians, in [0, pi]."""
    ng = l2_norm(mass, g)
    if ng == 0.0:
        raise DegenerateDerivativeError("topological derivative has zero L2 norm")
    npsi = l2_norm(mass, psi)
    if npsi == 0.0:
        raise ValueError("level set has zero L2 norm")
    c = l2_inner(mass, psi, g) / (npsi * ng)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def update_level_set(psi: np.ndarray, g: np.ndarray, kappa: float, mass: sp.spmatrix) -> np.ndarray:
    """Spherical step psi' = [sin((1-k) theta) psi + sin(k theta) g/||g||] / sin(theta).

    kappa = 1 jumps to g/||g||; theta = 0 returns psi unchanged; theta = pi is
    a degeneracy (no unique great circle) and raises.
    """
    if not 0.0 < kappa <= 1.0:
        raise ValueError("kappa must be in (0, 1]")
    theta = angle(psi, g, mass)
    if theta == 0.0:
        return psi
    if theta >= np.pi:
        raise AntipodalError("psi and g are antipodal; the sphere step is undefined")
    g_hat = normalize(mass, g)
    out = (np.sin((1.0 - kappa) * theta) * psi + np.sin(kappa * theta) * g_hat) / np.sin(theta)
    return normalize(mass, out)


def material_indicator(mesh: Mesh2D, psi: np.ndarray) -> np.ndarray:
    """Boolean per triangle: True where the vertex-average of psi is negative."""
    return psi[mesh.triangles].mean(axis=1) < 0.0


class SourceIdentificationProblem:
    """Shipped demo: recover a source layout from an observed state.

    State: -Lap(y) = f1 on {psi < 0}, f2 elsewhere, y = 0 on the boundary of
    the unit square.  Cost: 1/2 int (y - y_d)^2 with y_d generated from a
    reference disk layout.  The generalized topological derivative is
    (f1 - f2) p with adjoint -Lap(p) = y - y_d, oriented so that alignment
    psi = g/||g|| is the local optimality condition.
    """

    def __init__(self, mesh: Mesh2D, f_inside: float = 10.0, f_outside: float = 1.0,
                 reference_center=(0.5, 0.5), reference_radius: float = 0.25):
        self.mesh = mesh
        self.f_inside = f_inside
        self.f_outside = f_outside
        self.mass = fem.assemble_mass(mesh)
        stiff = fem.assemble_stiffness(mesh)
        bcs = [fem.DirichletBC(mk, 0.0) for mk in sorted(mesh.marker_set())]
        self.constrained, _ = fem.dirichlet_values(mesh, bcs)
        self.a_bc, _ = fem.eliminate(stiff, np.zeros(mesh.n_nodes), self.constrained)
        cx, cy = reference_center
        self.psi_reference = normalize(self.mass, np.hypot(
            mesh.nodes[:, 0] - cx, mesh.nodes[:, 1] - cy) - reference_radius)
        self.y_desired = self.solve_state(self.psi_reference)

    def source(self, psi: np.ndarray) -> np.ndarray:
        inside = material_indicator(self.mesh, psi)
        return np.where(inside, self.f_inside, self.f_outside)

    def solve_state(self, psi: np.ndarray) -> np.ndarray:
        b = fem.load_vector(self.mesh, self.source(psi))
        b[self.constrained] = 0.0
        return fem.solve(self.a_bc, b)

    def cost(self, psi: np.ndarray, state: np.ndarray) -> float:
        d = state - self.y_desired
        return 0.5 * l2_inner(self.mass, d, d)

    def solve_adjoint(self, psi: np.ndarray, state: np.ndarray) -> np.ndarray:
        rhs = self.mass @ (state - self.y_desired)
        rhs[self.constrained] = 0.0
        return fem.solve(self.a_bc, rhs)

    def topological_derivative(self, mesh: Mesh2D, state: np.ndarray,
                               adjoint: np.ndarray, psi: np.ndarray) -> np.ndarray:
        return (self.f_inside - self.f_outside) * adjoint

    def flip_prediction(self, psi: np.ndarray, g: np.ndarray, triangle: int) -> float:
        """First-order cost change from flipping one triangle's material.

        The oriented derivative g predicts +g |T| for adding material (flip of
        an outside cell) and -g |T| for removing it.
        """
        area = float(self.mesh.signed_areas()[triangle])
        g_avg = float(g[self.mesh.triangles[triangle]].mean())
        inside = bool(material_indicator(self.mesh, psi)[triangle])
        return (-1.0 if inside else 1.0) * g_avg * area

    def flipped_cost(self, psi: np.ndarray, triangle: int) -> float:
        """Exact cost after flipping one triangle's material (re-solves the state)."""
        source = self.source(psi).copy()
        tri_src = source[triangle]
        source[triangle] = self.f_inside if tri_src == self.f_outside else self.f_outside
        b = fem.load_vector(self.mesh, source)
        b[self.constrained] = 0.0
        y = fem.solve(self.a_bc, b)
        d = y - self.y_desired
        return 0.5 * l2_inner(self.mass, d, d)


def _evaluate(problem, psi):
    state = problem.solve_state(psi)
    return state, problem.cost(psi, state)


def _derivative(problem, supplier, psi, state):
    adjoint = problem.solve_adjoint(psi, state)
    return supplier(problem.mesh, state, adjoint, psi)


def _sphere_step(problem, supplier, psi, cost, g, theta, mass, cfg):
    """One convex-combination move: halve kappa until the cost decreases.

    Returns (psi', state', cost', kappa) or None when kappa underflows.
    """
    kappa = cfg.kappa_init
    while kappa >= cfg.kappa_min:
        psi_trial = update_level_set(psi, g, kappa, mass)
        state_trial, cost_trial = _evaluate(problem, psi_trial)
        if cost_trial < cost:
            return psi_trial, state_trial, cost_trial, kappa
        kappa *= 0.5
    return None


def solve(problem, psi0: np.ndarray, supplier, cfg: TopOptConfig) -> TopOptResult:
    """Sphere-combination fixed point: rotate psi toward g until aligned.

    supplier(mesh, state, adjoint, psi) returns the generalized topological
    derivative oriented so that psi = g/||g|| at local optima.  History records
    cost, theta (degrees), and the accepted kappa per iteration.
    """
    mass = problem.mass
    psi = normalize(mass, np.asarray(psi0, dtype=float))
    state, cost = _evaluate(problem, psi)
    g = _derivative(problem, supplier, psi, state)
    theta = angle(psi, g, mass)
    theta_tol = np.radians(cfg.theta_tol_deg)
    history = [TopOptRecord(0, cost, np.degrees(theta), 0.0)]

    for it in range(1, cfg.max_iter + 1):
        if theta <= theta_tol:
            return TopOptResult(psi, history, True, "angle tolerance reached")
        step = _sphere_step(problem, supplier, psi, cost, g, theta, mass, cfg)
        if step is None:
            return TopOptResult(psi, history, False, "kappa underflow without decrease")
        psi, state, cost, kappa = step
        g = _derivative(problem, supplier, psi, state)
        if l2_norm(mass, g) == 0.0:  # derivative vanished: exact optimum
            history.append(TopOptRecord(it, cost, 0.0, kappa))
            return TopOptResult(psi, history, True, "topological derivative vanished")
        theta = angle(psi, g, mass)
        history.append(TopOptRecord(it, cost, np.degrees(theta), kappa))

    converged = theta <= theta_tol
    msg = "angle tolerance reached" if converged else "maximum iterations reached"
    return TopOptResult(psi, history, converged, msg)


def quasi_newton_solve(problem, psi0: np.ndarray, supplier, cfg: TopOptConfig) -> TopOptResult:
    """Limited-memory BFGS on the sphere with convex-combination fallback.

    Curvature pairs are built from successive (psi, projected residual).  Every
    iteration also evaluates one plain sphere step and keeps whichever proposal
    decreases the cost more, so per-iteration progress is never worse than the
    convex-combination method's.  memory = 0 reproduces the convex-combination
    iterate sequence exactly.
    """
    mass = problem.mass
    inner = lambda a, b: l2_inner(mass, a, b)
    psi = normalize(mass, np.asarray(psi0, dtype=float))
    state, cost = _evaluate(problem, psi)
    g = _derivative(problem, supplier, psi, state)
    theta = angle(psi, g, mass)
    theta_tol = np.radians(cfg.theta_tol_deg)
    history = [TopOptRecord(0, cost, np.degrees(theta), 0.0)]

    def residual(psi_v, g_v):
        g_hat = normalize(mass, g_v)
        return g_hat - inner(g_hat, psi_v) * psi_v

    pairs: deque = deque(maxlen=max(cfg.memory, 1))
    r = residual(psi, g)

    for it in range(1, cfg.max_iter + 1):
        if theta <= theta_tol:
            return TopOptResult(psi, history, True, "angle tolerance reached")

        proposal = None
        kappa_used = 0.0
        if cfg.memory > 0 and pairs:
            d = _apply_inverse_hessian(r, list(pairs), inner)
            psi_trial = normalize(mass, psi + d)
            state_trial, cost_trial = _evaluate(problem, psi_trial)
            if cost_trial < cost:
                proposal = (psi_trial, state_trial, cost_trial)
        step = _sphere_step(problem, supplier, psi, cost, g, theta, mass, cfg)
        if proposal is not None and (step is None or proposal[2] <= step[2]):
            psi_new, state_new, cost_new = proposal
        elif step is not None:
            psi_new, state_new, cost_new, kappa_used = step
        else:
            return TopOptResult(psi, history, False, "kappa underflow without decrease")

        g_new = _derivative(problem, supplier, psi_new, state_new)
        if l2_norm(mass, g_new) == 0.0:  # derivative vanished: exact optimum
            history.append(TopOptRecord(it, cost_new, 0.0, kappa_used))
            return TopOptResult(psi_new, history, True, "topological derivative vanished")
        r_new = residual(psi_new, g_new)
        if cfg.memory > 0:
            s = psi_new - psi
            yv = r - r_new  # the residual plays the role of a negative gradient
            sy = inner(s, yv)
            if sy > 1e-14 * np.sqrt(max(inner(s, s), 0.0)) * np.sqrt(max(inner(yv, yv), 0.0)):
                pairs.append((s, yv, 1.0 / sy))
        psi, state, cost, g, r = psi_new, state_new, cost_new, g_new, r_new
        theta = angle(psi, g, mass)
        history.append(TopOptRecord(it, cost, np.degrees(theta), kappa_used))

    converged = theta <= theta_tol
    msg = "angle tolerance reached" if converged else "maximum iterations reached"
    return TopOptResult(psi, history, converged, msg)


def _apply_inverse_hessian(r: np.ndarray, pairs, inner) -> np.ndarray:
    """Two-loop recursion returning H r (the step toward alignment)."""
    q = r.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * inner(s, q)
        alphas.append(a)
        q = q - a * y
    s, y, rho = pairs[-1]
    q = (inner(s, y) / inner(y, y)) * q
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * inner(y, q)
        q = q + (a - b) * s
    return q
