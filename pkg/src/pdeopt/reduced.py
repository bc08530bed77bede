"""Discrete-adjoint framework for reduced-space optimization.

A DiscreteProblem supplies the residual R(y, q), its Jacobians, and the cost
with its partial gradients; state solves, adjoint solves, and reduced gradients
then come for free.  Gradients are returned as Riesz representatives with
respect to a configurable design scalar product.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import fem


@dataclass
class DiscreteProblem:
    """Residual/cost description of one PDE-constrained problem.

    residual:          R(y, q) -> (n,) array, R = 0 defines the state.
    state_jacobian:    dR/dy(y, q) -> sparse (n, n).
    design_jacobian:   dR/dq(y, q) -> sparse or dense (n, m).
    cost:              J(y, q) -> float.
    cost_grad_state:   dJ/dy(y, q) -> (n,).
    cost_grad_design:  dJ/dq(y, q) -> (m,).
    """

    residual: Callable
    state_jacobian: Callable
    design_jacobian: Callable
    cost: Callable
    cost_grad_state: Callable
    cost_grad_design: Callable
    state_dim: int
    design_dim: int
    linear_state: bool = False

    def solve_state(self, q: np.ndarray, y0=None, tol: float = 1e-12, max_iter: int = 25) -> np.ndarray:
        """Newton solve of R(y, q) = 0; one exact step for linear residuals."""
        y = np.zeros(self.state_dim) if y0 is None else np.array(y0, dtype=float)
        r = self.residual(y, q)
        rn = np.linalg.norm(r)
        scale = max(rn, 1.0)
        for _ in range(max_iter):
            if rn <= tol * scale:
                return y
            jac = sp.csr_matrix(self.state_jacobian(y, q))
            y = y + fem.solve(jac, -r, rtol=1e-13)
            r = self.residual(y, q)
            rn = np.linalg.norm(r)
            if self.linear_state:
                break
        if rn <= tol * scale:
            return y
        raise fem.SolverError("state solve did not converge", float(rn))


class ReducedFunctional:
    """Cost as a function of the design alone, with adjoint-based gradients.

    The design scalar product defaults to the identity; PDE control problems
    pass the control-space mass matrix so gradients live in L2.
    """

    def __init__(self, problem: DiscreteProblem, design_product: sp.spmatrix | None = None):
        self.problem = problem
        self.design_product = None if design_product is None else sp.csr_matrix(design_product)
        self._q = None
        self._y = None
        self._adjoint = None

    # -- scalar-product plumbing -------------------------------------------------
    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        if self.design_product is None:
            return float(a @ b)
        return float(a @ (self.design_product @ b))

    def norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(a, a), 0.0)))

    def riesz_representative(self, covector: np.ndarray) -> np.ndarray:
        if self.design_product is None:
            return covector
        return fem.solve(self.design_product, covector, rtol=1e-13)

    # -- evaluation ----------------------------------------------------------------
    def _ensure_state(self, q: np.ndarray) -> np.ndarray:
        if self._q is not None and np.array_equal(q, self._q):
            return self._y
        y0 = self._y  # warm start; correctness is unaffected, R is re-solved
        y = self.problem.solve_state(q, y0=y0)
        self._q = np.array(q, dtype=float)
        self._y = y
        self._adjoint = None
        return y

    def evaluate(self, q: np.ndarray) -> float:
        y = self._ensure_state(q)
        value = float(self.problem.cost(y, q))
        if not np.isfinite(value):
            raise fem.SolverError("cost evaluated to a nonfinite value", np.inf)
        return value

    def gradient(self, q: np.ndarray) -> np.ndarray:
        """Riesz representative of dJ/dq + (dR/dq)^T p with (dR/dy)^T p = -dJ/dy."""
        y = self._ensure_state(q)
        jac_y = sp.csr_matrix(self.problem.state_jacobian(y, q))
        rhs = -np.asarray(self.problem.cost_grad_state(y, q), dtype=float)
        p = fem.solve(jac_y.T.tocsr(), rhs, rtol=1e-13)
        self._adjoint = p
        jac_q = self.problem.design_jacobian(y, q)
        euclid = np.asarray(self.problem.cost_grad_design(y, q), dtype=float) + jac_q.T @ p
        return self.riesz_representative(euclid)

    @property
    def last_state(self):
        return self._y

    @property
    def last_adjoint(self):
        return self._adjoint


@dataclass
class DerivativeReport:
    """Relative FD errors per quantity and step, from verify_derivatives."""

    steps: np.ndarray
    errors: dict = field(default_factory=dict)  # name -> (n_steps,) array

    def best(self, name: str) -> float:
        return float(np.min(self.errors[name]))

    def summary(self) -> str:
        lines = [f"{'step':>10}  " + "  ".join(f"{k:>14}" for k in self.errors)]
        for i, h in enumerate(self.steps):
            row = "  ".join(f"{self.errors[k][i]:14.6e}" for k in self.errors)
            lines.append(f"{h:10.1e}  {row}")
        return "\n".join(lines)


def _rel_err(approx: np.ndarray, exact: np.ndarray) -> float:
    denom = max(np.linalg.norm(exact), 1e-300)
    return float(np.linalg.norm(approx - exact) / denom)


def verify_derivatives(
    problem: DiscreteProblem,
    y: np.ndarray,
    q: np.ndarray,
    n_directions: int = 3,
    steps=None,
    seed: int = 0,
) -> DerivativeReport:
    """Central-difference checks of all four Jacobians in random directions."""
    if steps is None:
        steps = np.logspace(-3, -7, 9)
    steps = np.asarray(steps, dtype=float)
    rng = np.random.default_rng(seed)
    report = DerivativeReport(steps=steps)

    checks = {
        "dR/dy": (lambda v: problem.residual(v, q), y,
                  lambda d: sp.csr_matrix(problem.state_jacobian(y, q)) @ d),
        "dR/dq": (lambda v: problem.residual(y, v), q,
                  lambda d: problem.design_jacobian(y, q) @ d),
        "dJ/dy": (lambda v: problem.cost(v, q), y,
                  lambda d: float(np.asarray(problem.cost_grad_state(y, q)) @ d)),
        "dJ/dq": (lambda v: problem.cost(y, v), q,
                  lambda d: float(np.asarray(problem.cost_grad_design(y, q)) @ d)),
    }
    for name, (func, base, action) in checks.items():
        errs = np.zeros(len(steps))
        dirs = [rng.standard_normal(base.shape) for _ in range(n_directions)]
        dirs = [d / max(np.linalg.norm(d), 1e-300) for d in dirs]
        for i, h in enumerate(steps):
            worst = 0.0
            for d in dirs:
                fd = (np.asarray(func(base + h * d)) - np.asarray(func(base - h * d))) / (2.0 * h)
                worst = max(worst, _rel_err(fd, np.asarray(action(d))))
            errs[i] = worst
        report.errors[name] = errs
    return report


def fd_directional(evaluate: Callable, q: np.ndarray, direction: np.ndarray, steps=None):
    """Central finite differences of a scalar functional along one direction.

    Returns (steps, values); the best-agreement entry is the caller's oracle.
    """
    if steps is None:
        steps = np.logspace(-3, -7, 9)
    steps = np.asarray(steps, dtype=float)
    vals = np.zeros(len(steps))
    for i, h in enumerate(steps):
        vals[i] = (evaluate(q + h * direction) - evaluate(q - h * direction)) / (2.0 * h)
    return steps, vals
