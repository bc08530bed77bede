"""Potential-flow analog of the three-outlet flow-distribution problem.

Design variables are normal offsets of the three outlet-stub walls on the
reference channel mesh: offset z_m widens stub m by z_m on each side, with the
displacement blended linearly into the channel below.  The coarse model is the
linear potential flow on the reference-resolution mesh; the fine model solves
a gradient-dependent permeability on a twice-refined mesh by Picard iteration.
The space-mapping response is the vector of outlet flow fractions (rates
normalized by total throughput): the nonlinear permeability shifts the fine
rates' magnitude systematically, which puts raw rates outside the coarse
model's reachable set, while the flow distribution is always matchable.
"""

from __future__ import annotations

import numpy as np

from . import fem, optimize, spacemapping
from .linesearch import LineSearchConfig
from .mesh import Mesh2D, deform, signed_areas, three_outlet_channel
from .optimize import OptimizerConfig

STUB_CENTERS = (0.7, 1.5, 2.3)
STUB_HALF_WIDTH = 0.2
BLEND_START = 0.6  # displacement ramps in over BLEND_START <= y <= 1
INVALID_COST = 1e6

INLET = 1
OUTLETS = (2, 3, 4)


def stub_offsets_deformation(mesh: Mesh2D, z: np.ndarray) -> np.ndarray:
    """Nodal displacement widening stub m by z[m] on each side wall."""
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    blend = np.clip((y - BLEND_START) / (1.0 - BLEND_START), 0.0, 1.0)
    dx = np.zeros_like(x)
    for center, delta in zip(STUB_CENTERS, np.asarray(z, dtype=float)):
        s = x - center
        a = np.abs(s)
        ramp = np.where(
            a <= STUB_HALF_WIDTH,
            s / STUB_HALF_WIDTH,
            np.sign(s) * np.clip((2.0 * STUB_HALF_WIDTH - a) / STUB_HALF_WIDTH, 0.0, 1.0),
        )
        dx += delta * ramp * blend
    return np.column_stack([dx, np.zeros_like(dx)])


def kappa_nonlinear(grad_sq: np.ndarray) -> np.ndarray:
    """Gradient-dependent permeability 1 + 1/2 / (1 + |grad u|^2)."""
    return 1.0 + 0.5 / (1.0 + grad_sq)


class ChannelFlowModel:
    """Potential flow through the channel with Dirichlet inlet/outlet potentials."""

    def __init__(self, resolution: int = 1, nonlinear: bool = False):
        self.mesh0 = three_outlet_channel(resolution)
        self.nonlinear = nonlinear
        self.bcs = [fem.DirichletBC(INLET, 1.0)] + [fem.DirichletBC(m, 0.0) for m in OUTLETS]
        self._outlet_nodes = [self.mesh0.nodes_on([m]) for m in OUTLETS]

    def deformed_mesh(self, z: np.ndarray) -> Mesh2D:
        return deform(self.mesh0, stub_offsets_deformation(self.mesh0, z))

    def solve_potential(self, mesh: Mesh2D) -> tuple[np.ndarray, np.ndarray]:
        """Potential and per-triangle permeability on the given mesh."""
        idx, vals = fem.dirichlet_values(mesh, self.bcs)
        kappa = np.ones(mesh.n_triangles)
        stiff = fem.assemble_stiffness(mesh, kappa)
        a_bc, b_bc = fem.eliminate(stiff, np.zeros(mesh.n_nodes), idx, vals)
        u = fem.solve(a_bc, b_bc)
        if not self.nonlinear:
            return u, kappa
        areas, grads = fem.triangle_gradients(mesh)
        for _ in range(50):
            grad_u = np.einsum("tmd,tm->td", grads, u[mesh.triangles])
            kappa = kappa_nonlinear(np.einsum("td,td->t", grad_u, grad_u))
            stiff = fem.assemble_stiffness(mesh, kappa)
            a_bc, b_bc = fem.eliminate(stiff, np.zeros(mesh.n_nodes), idx, vals)
            u_new = fem.solve(a_bc, b_bc)
            rel = np.linalg.norm(u_new - u) / max(np.linalg.norm(u_new), 1e-300)
            u = u_new
            if rel <= 1e-11:
                return u, kappa
        raise fem.SolverError("Picard iteration for the permeability stalled", float(rel))

    def outlet_rates(self, mesh: Mesh2D, u: np.ndarray, kappa: np.ndarray) -> np.ndarray:
        """Discrete outflow per outlet from the unconstrained residual K u."""
        stiff = fem.assemble_stiffness(mesh, kappa)
        flux = stiff @ u
        return np.array([-float(flux[nodes].sum()) for nodes in self._outlet_nodes])

    def response(self, z: np.ndarray) -> np.ndarray:
        mesh = self.deformed_mesh(z)  # raises MeshInversionError for wild offsets
        u, kappa = self.solve_potential(mesh)
        return self.outlet_rates(mesh, u, kappa)

    def potential_field(self, z: np.ndarray):
        """(mesh, u) for VTK dumps of the analog's velocity potential."""
        mesh = self.deformed_mesh(z)
        u, _ = self.solve_potential(mesh)
        return mesh, u


def imbalance_cost(rates: np.ndarray) -> float:
    """1/2 sum (q_i - mean q)^2: zero exactly at a uniform distribution."""
    d = rates - rates.mean()
    return 0.5 * float(d @ d)


def flow_fractions(rates: np.ndarray) -> np.ndarray:
    return rates / rates.sum()


class CoarseChannelModel(spacemapping.CoarseModel):
    """Linear coarse flow model responding with outlet flow fractions.

    The response Jacobian comes from central differences on the three design
    variables (the coarse model is cheap by definition).  Trial designs that
    invert or badly degrade the mesh get a large finite cost so the inner line
    searches back off instead of crashing.
    """

    def __init__(self, resolution: int = 1, fd_step: float = 1e-6):
        self.model = ChannelFlowModel(resolution, nonlinear=False)
        self.fd_step = fd_step

    def rates(self, z: np.ndarray) -> np.ndarray:
        return self.model.response(z)

    def response(self, z: np.ndarray) -> np.ndarray:
        return flow_fractions(self.model.response(z))

    def guarded_cost(self, z: np.ndarray, func) -> float:
        from .mesh import MeshInversionError, min_quality

        try:
            mesh = self.model.deformed_mesh(z)
            if min_quality(mesh) < 0.05:
                raise MeshInversionError(-1, 0.0)
            u, kappa = self.model.solve_potential(mesh)
            return func(flow_fractions(self.model.outlet_rates(mesh, u, kappa)))
        except (MeshInversionError, fem.SolverError):
            return INVALID_COST * (1.0 + float(z @ z))

    def response_jacobian(self, z: np.ndarray) -> np.ndarray:
        h = self.fd_step
        cols = []
        for j in range(len(z)):
            e = np.zeros(len(z))
            e[j] = h
            cols.append((self.response(z + e) - self.response(z - e)) / (2.0 * h))
        return np.column_stack(cols)

    def misalignment(self, z, r, scale=1.0):
        return self.guarded_cost(z, lambda q: 0.5 * float(((q - r) / scale) @ ((q - r) / scale)))

    def optimize(self) -> np.ndarray:
        outer = self
        target = np.full(3, 1.0 / 3.0)

        class Balance:
            def evaluate(self, z):
                return outer.guarded_cost(z, lambda q: 0.5 * float((q - target) @ (q - target)))

            def gradient(self, z):
                q = outer.response(z)
                jac = outer.response_jacobian(z)
                return jac.T @ (q - target)

            def inner(self, a, b):
                return float(a @ b)

            def norm(self, a):
                return float(np.linalg.norm(a))

        cfg = OptimizerConfig(algorithm="lbfgs", rtol=1e-6, atol=1e-12, max_iter=100,
                              linesearch=LineSearchConfig(method="polynomial", alpha0=0.05))
        result = optimize.minimize(Balance(), np.zeros(3), cfg)
        return result.q


def build_flow_pair(resolution: int = 1):
    """(fine, coarse, fine_model, rates_log) for the flow-distribution analog.

    The instrumented fine model responds with flow fractions; the raw rates of
    every fine evaluation are appended to rates_log so reporting needs no
    extra evaluations.
    """
    coarse = CoarseChannelModel(resolution)
    fine_model = ChannelFlowModel(2 * resolution, nonlinear=True)
    rates_log: list[np.ndarray] = []

    def fine_fractions(x):
        rates = fine_model.response(x)
        rates_log.append(rates)
        return flow_fractions(rates)

    fine = spacemapping.FineModel(fine_fractions)

    def valid_design(x):
        from .mesh import MeshInversionError, min_quality

        try:
            return min_quality(fine_model.deformed_mesh(x)) >= 0.05
        except MeshInversionError:
            return False

    return fine, coarse, fine_model, rates_log, valid_design
