"""Step-size selection: Armijo backtracking and safeguarded polynomial models.

Both methods accept a step only when it satisfies the Armijo sufficient-decrease
inequality phi(a) <= phi(0) + c1 a phi'(0).  The polynomial variant proposes the
next trial by minimizing a quadratic (after one rejection) or cubic (after two
or more) model of phi instead of plain halving.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# Optional audit hook: when a list is assigned, every accepted step appends
# (alpha, phi0, dphi0, phi_alpha).  Used by the acceptance suite to assert the
# Armijo inequality across whole demo runs.
ARMIJO_AUDIT: list | None = None


class LineSearchError(RuntimeError):
    """No acceptable step within the trial budget; carries the trial record."""

    def __init__(self, trials: list[tuple[float, float]]):
        alpha, value = trials[-1] if trials else (float("nan"), float("nan"))
        super().__init__(
            f"line search failed after {len(trials)} trials "
            f"(last: alpha={alpha:.3e}, phi={value:.6e})"
        )
        self.trials = trials


@dataclass
class LineSearchConfig:
    method: str = "armijo"  # "armijo" | "polynomial"
    c1: float = 1e-4
    shrink: float = 0.5
    alpha0: float = 1.0
    max_trials: int = 30
    low: float = 0.1   # safeguard interval fractions of the last rejected step
    high: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.c1 < 1.0:
            raise ValueError("c1 must be in (0, 1)")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink must be in (0, 1)")
        if not 0.0 < self.low < self.high < 1.0:
            raise ValueError("safeguard fractions must satisfy 0 < low < high < 1")
        if self.method not in ("armijo", "polynomial"):
            raise ValueError(f"unknown line-search method {self.method!r}")


def accepted(alpha, phi_alpha, phi0, dphi0, c1) -> bool:
    """Armijo test; appends to the audit hook on acceptance."""
    ok = phi_alpha <= phi0 + c1 * alpha * dphi0
    if ok and ARMIJO_AUDIT is not None:
        ARMIJO_AUDIT.append((alpha, phi0, dphi0, phi_alpha))
    return ok


def armijo(phi: Callable[[float], float], phi0: float, dphi0: float, cfg: LineSearchConfig):
    """Backtracking: first alpha in {alpha0 shrink^k} passing the Armijo test.

    Returns (alpha, phi(alpha), trials).  dphi0 must be negative.
    """
    if dphi0 >= 0.0:
        raise ValueError(f"armijo needs a descent direction (dphi0 = {dphi0:.3e} >= 0)")
    trials: list[tuple[float, float]] = []
    alpha = cfg.alpha0
    for _ in range(cfg.max_trials):
        value = phi(alpha)
        trials.append((alpha, value))
        if accepted(alpha, value, phi0, dphi0, cfg.c1):
            return alpha, value, trials
        alpha *= cfg.shrink
    raise LineSearchError(trials)


def quadratic_min(phi0: float, dphi0: float, a0: float, phi_a0: float) -> float:
    """Minimizer of the quadratic through (0, phi0) with slope dphi0 and (a0, phi(a0))."""
    denom = 2.0 * (phi_a0 - phi0 - dphi0 * a0)
    if denom == 0.0:
        return float("nan")
    return -dphi0 * a0 * a0 / denom


def cubic_min(phi0: float, dphi0: float, a_prev: float, f_prev: float,
              a_last: float, f_last: float) -> float:
    """Minimizer of the cubic through (0, phi0), slope dphi0, and two trial points."""
    r_prev = f_prev - phi0 - dphi0 * a_prev
    r_last = f_last - phi0 - dphi0 * a_last
    det = a_prev * a_prev * a_last * a_last * (a_last - a_prev)
    if det == 0.0:
        return float("nan")
    a = (a_prev * a_prev * r_last - a_last * a_last * r_prev) / det
    b = (-(a_prev ** 3) * r_last + a_last ** 3 * r_prev) / det
    if a == 0.0:  # the data is quadratic
        if b == 0.0:
            return float("nan")
        return -dphi0 / (2.0 * b)
    disc = b * b - 3.0 * a * dphi0
    if disc < 0.0:
        return float("nan")
    return (-b + np.sqrt(disc)) / (3.0 * a)


def polynomial_step(phi0: float, dphi0: float, trials: list[tuple[float, float]],
                    cfg: LineSearchConfig | None = None) -> float:
    """Safeguarded next trial step from the recorded (rejected) trials.

    One trial: quadratic model; two or more: cubic through the last two.  The
    model minimizer is clamped into [low a_last, high a_last], the standard
    safeguard after a rejection; a nonfinite minimizer falls back to
    shrink * a_last.
    """
    if not trials:
        raise ValueError("polynomial_step needs at least one recorded trial")
    if cfg is None:
        cfg = LineSearchConfig(method="polynomial")
    a_last, f_last = trials[-1]
    if len(trials) == 1:
        candidate = quadratic_min(phi0, dphi0, a_last, f_last)
    else:
        a_prev, f_prev = trials[-2]
        candidate = cubic_min(phi0, dphi0, a_prev, f_prev, a_last, f_last)
    if not np.isfinite(candidate):
        return cfg.shrink * a_last
    return float(min(max(candidate, cfg.low * a_last), cfg.high * a_last))


def search(phi: Callable[[float], float], phi0: float, dphi0: float, cfg: LineSearchConfig):
    """Run the configured line search; returns (alpha, phi(alpha), trials)."""
    if cfg.method == "armijo":
        return armijo(phi, phi0, dphi0, cfg)
    if dphi0 >= 0.0:
        raise ValueError(f"line search needs a descent direction (dphi0 = {dphi0:.3e} >= 0)")
    trials: list[tuple[float, float]] = []
    alpha = cfg.alpha0
    for _ in range(cfg.max_trials):
        value = phi(alpha)
        trials.append((alpha, value))
        if accepted(alpha, value, phi0, dphi0, cfg.c1):
            return alpha, value, trials
        alpha = polynomial_step(phi0, dphi0, trials, cfg)
    raise LineSearchError(trials)
