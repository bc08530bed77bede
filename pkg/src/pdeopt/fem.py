"""P1 finite-element assembly and sparse linear algebra for scalar PDEs on Mesh2D.

Nodal scalar fields are plain numpy arrays of length n_nodes; operators are
scipy CSR matrices.  All integrals are exact for P1 data (coefficients are
averaged to piecewise constants per triangle).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh2D

DIRECT_SOLVE_LIMIT = 2000


class InvalidCoefficientError(ValueError):
    """A diffusion coefficient is nonpositive on some triangle."""


class SolverError(RuntimeError):
    """Linear or nonlinear solve failed to meet its residual contract."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class DirichletBC:
    """Dirichlet condition y = value(x, y) on all nodes of a boundary marker."""

    marker: int
    value: Callable[[float, float], float] | float = 0.0

    def values_at(self, coords: np.ndarray) -> np.ndarray:
        if callable(self.value):
            return np.array([float(self.value(x, y)) for x, y in coords])
        return np.full(coords.shape[0], float(self.value))


def triangle_gradients(mesh: Mesh2D) -> tuple[np.ndarray, np.ndarray]:
    """Areas (m,) and P1 basis gradients (m, 3, 2) per triangle."""
    p = mesh.nodes[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    areas = 0.5 * det
    grads = np.empty((mesh.n_triangles, 3, 2))
    # grad(phi_i) = rot90(opposite edge) / (2A), with b_i = y_j - y_k, c_i = x_k - x_j
    x, y = p[..., 0], p[..., 1]
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        grads[:, i, 0] = (y[:, j] - y[:, k]) / det
        grads[:, i, 1] = (x[:, k] - x[:, j]) / det
    return areas, grads


def _coefficient_per_triangle(mesh: Mesh2D, coefficient) -> np.ndarray:
    if np.isscalar(coefficient):
        kappa = np.full(mesh.n_triangles, float(coefficient))
    else:
        coefficient = np.asarray(coefficient, dtype=float)
        if coefficient.shape == (mesh.n_triangles,):
            kappa = coefficient
        elif coefficient.shape == (mesh.n_nodes,):
            kappa = coefficient[mesh.triangles].mean(axis=1)
        else:
            raise ValueError("coefficient must be scalar, per-node, or per-triangle")
    if np.any(kappa <= 0.0):
        bad = int(np.argmin(kappa))
        raise InvalidCoefficientError(
            f"coefficient is nonpositive ({kappa[bad]:.3e}) on triangle {bad}"
        )
    return kappa


def assemble_stiffness(mesh: Mesh2D, coefficient=1.0) -> sp.csr_matrix:
    """Galerkin P1 stiffness matrix of -div(kappa grad u).

    kappa may be a constant, a per-node field (averaged per triangle), or a
    per-triangle array; it must be strictly positive where used.
    """
    kappa = _coefficient_per_triangle(mesh, coefficient)
    areas, grads = triangle_gradients(mesh)
    local = np.einsum("t,tid,tjd->tij", kappa * areas, grads, grads)
    return _scatter(mesh, local)


def assemble_mass(mesh: Mesh2D) -> sp.csr_matrix:
    """P1 mass matrix with exact integration: local (area/12) [[2,1,1],[1,2,1],[1,1,2]]."""
    areas = mesh.signed_areas()
    base = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    local = areas[:, None, None] * base[None, :, :]
    return _scatter(mesh, local)


def _scatter(mesh: Mesh2D, local: np.ndarray) -> sp.csr_matrix:
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    a = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    a = a.tocsr()
    a.sum_duplicates()
    return a


def load_vector(mesh: Mesh2D, f) -> np.ndarray:
    """Consistent load vector of int f phi_i with f given per node (P1) or per triangle (P0)."""
    areas = mesh.signed_areas()
    b = np.zeros(mesh.n_nodes)
    f = np.asarray(f, dtype=float) if not np.isscalar(f) else np.full(mesh.n_nodes, float(f))
    if f.shape == (mesh.n_triangles,):
        np.add.at(b, mesh.triangles.ravel(), np.repeat(f * areas / 3.0, 3))
        return b
    if f.shape != (mesh.n_nodes,):
        raise ValueError("f must be per-node or per-triangle")
    fe = f[mesh.triangles]
    base = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    contrib = np.einsum("t,ij,tj->ti", areas, base, fe)
    np.add.at(b, mesh.triangles.ravel(), contrib.ravel())
    return b


def basis_integrals(mesh: Mesh2D) -> np.ndarray:
    """Vector of int phi_i dx (one third of the incident triangle areas)."""
    areas = mesh.signed_areas()
    c = np.zeros(mesh.n_nodes)
    np.add.at(c, mesh.triangles.ravel(), np.repeat(areas / 3.0, 3))
    return c


def dirichlet_values(mesh: Mesh2D, bcs) -> tuple[np.ndarray, np.ndarray]:
    """Constrained node index array and their prescribed values."""
    values = np.zeros(mesh.n_nodes)
    constrained = np.zeros(mesh.n_nodes, dtype=bool)
    for bc in bcs:
        idx = mesh.nodes_on(bc.marker)
        constrained[idx] = True
        values[idx] = bc.values_at(mesh.nodes[idx])
    return np.nonzero(constrained)[0], values[constrained]


def apply_dirichlet(a: sp.csr_matrix, b: np.ndarray, mesh: Mesh2D, bcs):
    """Symmetric row/column elimination of Dirichlet nodes.

    Returns (a_bc, b_bc, constrained_indices).  The eliminated matrix keeps unit
    diagonal entries on constrained rows, so SPD structure is preserved.
    """
    idx, vals = dirichlet_values(mesh, bcs)
    a_bc, b_bc = eliminate(a, b, idx, vals)
    return a_bc, b_bc, idx


def eliminate(a: sp.csr_matrix, b: np.ndarray, constrained: np.ndarray, values=None):
    """Symmetric elimination of the given rows/columns with RHS correction."""
    n = a.shape[0]
    if values is None:
        values = np.zeros(len(constrained))
    free = np.ones(n, dtype=bool)
    free[constrained] = False
    g = np.zeros(n)
    g[constrained] = values
    e = sp.diags(free.astype(float))
    a_bc = (e @ a @ e + sp.diags((~free).astype(float))).tocsr()
    b_bc = np.where(free, b - a @ g, g)
    return a_bc, b_bc


def solve(a: sp.spmatrix, b: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Solve a SPD sparse system to ||b - A x|| <= rtol ||b||.

    Direct factorization below DIRECT_SOLVE_LIMIT unknowns, Jacobi-preconditioned
    conjugate gradients above; both are held to the same residual contract.
    """
    b = np.asarray(b, dtype=float)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros_like(b)
    n = a.shape[0]
    if n < DIRECT_SOLVE_LIMIT:
        lu = spla.splu(a.tocsc())
        x = lu.solve(b)
        res = np.linalg.norm(b - a @ x)
        for _ in range(3):  # iterative refinement until the contract holds
            if res <= rtol * nb:
                break
            x = x + lu.solve(b - a @ x)
            res = np.linalg.norm(b - a @ x)
    else:
        x, res = _pcg(a.tocsr(), b, rtol=rtol, max_iter=10 * n)
    if not np.isfinite(res) or res > rtol * nb:
        raise SolverError("linear solve failed to reach tolerance", float(res))
    return x


def _pcg(a: sp.csr_matrix, b: np.ndarray, rtol: float, max_iter: int):
    diag = a.diagonal()
    inv_diag = np.where(diag > 0.0, 1.0 / np.where(diag > 0.0, diag, 1.0), 1.0)
    x = np.zeros_like(b)
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    target = rtol * np.linalg.norm(b)
    res = np.linalg.norm(r)
    for _ in range(max_iter):
        if res <= target:
            break
        ap = a @ p
        pap = p @ ap
        if pap <= 0.0 or not np.isfinite(pap):
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        res = np.linalg.norm(r)
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, res


def solve_semilinear(
    mesh: Mesh2D,
    nonlinearity: Callable[[np.ndarray], np.ndarray],
    nonlinearity_prime: Callable[[np.ndarray], np.ndarray],
    f,
    bcs,
    tol: float = 1e-10,
    max_iter: int = 25,
) -> np.ndarray:
    """Damped Newton solve of -Lap(y) + N(y) = f with Dirichlet conditions.

    N must be monotone nondecreasing with derivative N'; the zero-order term is
    lumped (nodal quadrature), so the Newton matrix A + diag(w N'(y)) stays SPD
    and runs through the same solver path as the linear problems.
    Raises SolverError after max_iter Newton steps without reaching tol.
    """
    a = assemble_stiffness(mesh)
    w = basis_integrals(mesh)  # lumped mass
    f_vec = load_vector(mesh, f)
    idx, vals = dirichlet_values(mesh, bcs)

    y = np.zeros(mesh.n_nodes)
    y[idx] = vals

    def residual(yv):
        r = a @ yv + w * nonlinearity(yv) - f_vec
        r[idx] = yv[idx] - vals
        return r

    r = residual(y)
    rn = np.linalg.norm(r)
    for _ in range(max_iter):
        if rn <= tol:
            return y
        jac = a + sp.diags(w * nonlinearity_prime(y))
        jac_bc, rhs = eliminate(jac.tocsr(), -r, idx, np.zeros(len(idx)))
        delta = solve(jac_bc, rhs, rtol=1e-12)
        # Halve the step until the residual decreases.
        s = 1.0
        while s > 2.0**-30:
            y_trial = y + s * delta
            r_trial = residual(y_trial)
            rn_trial = np.linalg.norm(r_trial)
            if rn_trial < rn:
                y, r, rn = y_trial, r_trial, rn_trial
                break
            s *= 0.5
        else:
            raise SolverError("Newton damping stagnated", float(rn))
    if rn <= tol:
        return y
    raise SolverError(f"Newton did not converge in {max_iter} iterations", float(rn))
