"""Reduced-space first-order optimizers: steepest descent, PR+ NCG, L-BFGS.

The objective must provide evaluate(q), gradient(q), and inner(a, b); gradients
are Riesz representatives and all norms/inner products are taken in that design
scalar product, which keeps the stopping test mesh-independent.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import linesearch
from .linesearch import LineSearchConfig, LineSearchError

CURVATURE_SKIP = 1e-14


@dataclass
class OptimizerConfig:
    algorithm: str = "lbfgs"  # "steepest" | "ncg" | "lbfgs"
    rtol: float = 1e-3
    atol: float = 0.0
    max_iter: int = 100
    lbfgs_memory: int = 5
    linesearch: LineSearchConfig = field(default_factory=LineSearchConfig)

    def __post_init__(self):
        if self.rtol < 0.0 or self.atol < 0.0:
            raise ValueError("tolerances must be nonnegative")
        if self.algorithm not in ("steepest", "ncg", "lbfgs"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm == "lbfgs" and self.lbfgs_memory < 0:
            raise ValueError("lbfgs_memory must be >= 0")


@dataclass
class IterationRecord:
    iteration: int
    cost: float
    grad_norm: float
    step: float
    quality: float | None = None


@dataclass
class OptimizeResult:
    q: np.ndarray
    history: list[IterationRecord]
    converged: bool
    message: str = ""

    @property
    def iterations(self) -> int:
        return self.history[-1].iteration if self.history else 0

    @property
    def cost(self) -> float:
        return self.history[-1].cost


def ncg_direction(g_new: np.ndarray, g_old: np.ndarray, d_old: np.ndarray, inner=None) -> np.ndarray:
    """Polak-Ribiere+ direction -g_new + beta d_old, restarted when not descent."""
    if inner is None:
        inner = lambda a, b: float(a @ b)
    denom = inner(g_old, g_old)
    beta = 0.0
    if denom > 0.0:
        beta = max(0.0, inner(g_new, g_new - g_old) / denom)
    d = -g_new + beta * d_old
    if inner(g_new, d) >= 0.0:  # restart
        d = -g_new
    return d


def _two_loop(g: np.ndarray, pairs, inner) -> np.ndarray:
    """L-BFGS two-loop recursion: returns -H g; plain -g with no stored pairs."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * inner(s, q)
        alphas.append(a)
        q = q - a * y
    if pairs:
        s, y, rho = pairs[-1]
        gamma = inner(s, y) / inner(y, y)
        q = gamma * q
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * inner(y, q)
        q = q + (a - b) * s
    return -q


def minimize(f, q0: np.ndarray, cfg: OptimizerConfig) -> OptimizeResult:
    """Minimize a reduced functional until ||g|| <= max(atol, rtol ||g0||).

    The history records every iteration including the initial one; cost is
    nonincreasing across accepted steps (Armijo).  A line-search failure
    returns the best iterate with converged=False.
    """
    q = np.array(q0, dtype=float)
    cost = f.evaluate(q)
    if not np.isfinite(cost):
        raise ValueError("initial cost is not finite")
    g = f.gradient(q)
    gnorm = f.norm(g)
    tol = max(cfg.atol, cfg.rtol * gnorm)
    history = [IterationRecord(0, cost, gnorm, 0.0)]

    pairs: deque = deque(maxlen=max(cfg.lbfgs_memory, 1))
    use_memory = cfg.algorithm == "lbfgs" and cfg.lbfgs_memory > 0
    d_old = None
    g_old = None
    prev_decrease = None

    for it in range(1, cfg.max_iter + 1):
        if gnorm <= tol:
            return OptimizeResult(q, history, True, "gradient tolerance reached")

        scaled = False  # quasi-Newton directions carry their own natural step
        if cfg.algorithm == "steepest" or (cfg.algorithm == "lbfgs" and not use_memory):
            d = -g
        elif cfg.algorithm == "ncg":
            d = -g if d_old is None else ncg_direction(g, g_old, d_old, f.inner)
        else:
            d = _two_loop(g, list(pairs), f.inner)
            scaled = bool(pairs)

        dphi0 = f.inner(g, d)
        if dphi0 >= 0.0:  # fall back to steepest descent
            d = -g
            dphi0 = -f.inner(g, g)
            pairs.clear()
            scaled = False

        ls_cfg = cfg.linesearch
        if not scaled and prev_decrease is not None and dphi0 < 0.0:
            # Standard initial trial for gradient-type directions: the step that
            # would repeat twice the previous decrease at the current slope.
            guess = 2.0 * prev_decrease / dphi0
            if np.isfinite(guess) and guess > 0.0:
                ls_cfg = replace(cfg.linesearch, alpha0=guess)

        try:
            alpha, new_cost, _ = linesearch.search(
                lambda a: f.evaluate(q + a * d), cost, dphi0, ls_cfg
            )
        except LineSearchError as err:
            return OptimizeResult(q, history, False, str(err))
        prev_decrease = new_cost - cost

        q_new = q + alpha * d
        g_new = f.gradient(q_new)
        if use_memory:
            s = q_new - q
            y = g_new - g
            sy = f.inner(s, y)
            if sy > CURVATURE_SKIP * f.norm(s) * f.norm(y):
                pairs.append((s, y, 1.0 / sy))
        g_old, d_old = g, d
        q, cost, g = q_new, new_cost, g_new
        if not np.isfinite(cost):
            raise ValueError("cost became nonfinite during optimization")
        gnorm = f.norm(g)
        history.append(IterationRecord(it, cost, gnorm, alpha))

    converged = gnorm <= tol
    msg = "gradient tolerance reached" if converged else "maximum iterations reached"
    return OptimizeResult(q, history, converged, msg)
