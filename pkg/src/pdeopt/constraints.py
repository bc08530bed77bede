"""Quadratic-penalty and augmented-Lagrangian outer loops.

Both methods run on one engine: the quadratic penalty is the augmented
Lagrangian with multipliers frozen at zero and unconditional growth of the
penalty parameter, so the reduction contract between the two holds bitwise.
Constraints may evaluate the state (integral state constraints); their
gradients come from the same reduced-space machinery as the objective's.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import optimize
from .optimize import OptimizerConfig


@dataclass
class ConstraintSpec:
    """One scalar constraint c(q) = 0 (equality) or c(q) <= 0 (inequality).

    func evaluates c; grad returns the Riesz representative of dc/dq in the
    same design product as the objective's gradients.
    """

    kind: str  # "eq" | "ineq"
    func: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if self.kind not in ("eq", "ineq"):
            raise ValueError(f"constraint kind must be 'eq' or 'ineq', got {self.kind!r}")

    def violation(self, value: float) -> float:
        return abs(value) if self.kind == "eq" else max(value, 0.0)


@dataclass
class OuterLoopConfig:
    mu0: float = 1.0
    growth: float = 10.0
    tol_feas: float = 1e-5
    progress_ratio: float = 0.25
    max_outer: int = 25
    inner: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.mu0 <= 0.0:
            raise ValueError("mu0 must be positive")
        if self.growth <= 1.0:
            raise ValueError("growth must exceed 1")


@dataclass
class OuterRecord:
    outer_iteration: int
    mu: float
    max_violation: float
    inner_iterations: int
    cost: float


@dataclass
class ConstrainedResult:
    q: np.ndarray
    multipliers: np.ndarray
    history: list[OuterRecord]
    feasible: bool
    converged: bool
    message: str = ""

    @property
    def max_violation(self) -> float:
        return self.history[-1].max_violation if self.history else float("inf")


class _ShiftedPenaltyFunctional:
    """Inner objective J(q) + sum_i [lambda_i c_i + mu/2 chat_i^2].

    chat_i = c_i for equalities and max(c_i, -lambda_i/mu) for inequalities.
    """

    def __init__(self, objective, constraints, lam, mu):
        self.objective = objective
        self.constraints = constraints
        self.lam = lam
        self.mu = mu

    def _shifted(self, value, lam_i, kind):
        if kind == "eq":
            return value
        return max(value, -lam_i / self.mu)

    def evaluate(self, q):
        total = self.objective.evaluate(q)
        for lam_i, con in zip(self.lam, self.constraints):
            c = con.func(q)
            chat = self._shifted(c, lam_i, con.kind)
            total += lam_i * c + 0.5 * self.mu * chat * chat
        return total

    def gradient(self, q):
        g = self.objective.gradient(q).copy()
        for lam_i, con in zip(self.lam, self.constraints):
            c = con.func(q)
            chat = self._shifted(c, lam_i, con.kind)
            coeff = lam_i
            if con.kind == "eq" or c >= -lam_i / self.mu:
                coeff += self.mu * chat
            if coeff != 0.0:
                g = g + coeff * con.grad(q)
        return g

    def inner(self, a, b):
        return self.objective.inner(a, b)

    def norm(self, a):
        return self.objective.norm(a)


def _outer_loop(objective, constraints, q0, cfg, update_multipliers, gate_mu_growth,
                lambda0=None):
    lam = np.zeros(len(constraints)) if lambda0 is None else np.array(lambda0, dtype=float)
    mu = cfg.mu0
    q = np.array(q0, dtype=float)
    history: list[OuterRecord] = []
    violation_prev = np.inf

    for outer in range(1, cfg.max_outer + 1):
        inner_obj = _ShiftedPenaltyFunctional(objective, constraints, lam, mu)
        result = optimize.minimize(inner_obj, q, cfg.inner)
        q = result.q
        values = np.array([con.func(q) for con in constraints])
        violation = max((con.violation(v) for con, v in zip(constraints, values)), default=0.0)
        history.append(OuterRecord(outer, mu, violation, result.iterations, objective.evaluate(q)))

        if violation <= cfg.tol_feas and result.converged:
            return ConstrainedResult(q, lam, history, True, True, "feasible and stationary")

        if update_multipliers:
            for i, (con, v) in enumerate(zip(constraints, values)):
                if con.kind == "eq":
                    lam[i] = lam[i] + mu * v
                else:
                    lam[i] = max(0.0, lam[i] + mu * v)
        if (not gate_mu_growth) or violation > cfg.progress_ratio * violation_prev:
            mu *= cfg.growth
        violation_prev = violation

    feasible = history[-1].max_violation <= cfg.tol_feas
    return ConstrainedResult(q, lam, history, feasible, False,
                             "maximum outer iterations reached")


def quadratic_penalty_solve(objective, constraints, q0, cfg: OuterLoopConfig) -> ConstrainedResult:
    """Minimize J + mu/2 sum v_i^2 with mu grown by cfg.growth each outer pass.

    v_i is c_i for equalities and max(0, c_i) for inequalities; the loop stops
    once the worst violation is below cfg.tol_feas and the inner solve is
    stationary, or flags infeasibility after max_outer passes.
    """
    return _outer_loop(objective, constraints, q0, cfg,
                       update_multipliers=False, gate_mu_growth=False)


def augmented_lagrangian_solve(objective, constraints, q0, cfg: OuterLoopConfig,
                               lambda0=None, update_multipliers: bool = True,
                               gate_mu_growth: bool = True) -> ConstrainedResult:
    """Augmented Lagrangian with first-order multiplier updates.

    lambda_i <- lambda_i + mu c_i (clamped at 0 for inequalities); mu grows
    only when the violation fails to shrink by cfg.progress_ratio.  Freezing
    the multipliers at zero and forcing mu growth reproduces the quadratic
    penalty method bitwise (same engine, same branches).
    """
    return _outer_loop(objective, constraints, q0, cfg,
                       update_multipliers=update_multipliers,
                       gate_mu_growth=gate_mu_growth, lambda0=lambda0)
