"""Multi-term cost functionals with automatic initial-magnitude scaling."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

DEGENERATE_MAGNITUDE = 1e-15


@dataclass
class Term:
    """One summand of a cost functional with its desired initial weight."""

    evaluator: Callable[[np.ndarray], float]
    weight: float = 1.0
    gradient: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.weight <= 0.0:
            raise ValueError("term weights must be strictly positive")


class CostFunctional:
    """Weighted sum of terms: total = sum_i factor_i * J_i.

    Factors are 1 until compute_scaling fixes them at the initial iterate;
    they are never recomputed mid-run.
    """

    def __init__(self, terms: list[Term]):
        self.terms = list(terms)
        self.factors = np.ones(len(self.terms))

    def evaluate(self, q: np.ndarray) -> float:
        return float(sum(g * t.evaluator(q) for g, t in zip(self.factors, self.terms)))

    def evaluate_terms(self, q: np.ndarray) -> np.ndarray:
        return np.array([t.evaluator(q) for t in self.terms])

    def gradient(self, q: np.ndarray) -> np.ndarray:
        if any(t.gradient is None for t in self.terms):
            raise ValueError("all terms need a gradient callback for CostFunctional.gradient")
        return sum(g * t.gradient(q) for g, t in zip(self.factors, self.terms))


def compute_scaling(cost: CostFunctional, x0: np.ndarray) -> np.ndarray:
    """Fix factor_i = weight_i / |J_i(x0)| so each scaled term starts at weight_i.

    Terms with |J_i(x0)| below DEGENERATE_MAGNITUDE keep factor 1 and trigger a
    warning instead of dividing by (nearly) zero.
    """
    values = cost.evaluate_terms(x0)
    factors = np.ones(len(values))
    for i, (v, term) in enumerate(zip(values, cost.terms)):
        if abs(v) < DEGENERATE_MAGNITUDE:
            warnings.warn(
                f"cost term {i} has magnitude {abs(v):.1e} at the initial iterate; "
                "keeping scaling factor 1",
                stacklevel=2,
            )
        else:
            factors[i] = term.weight / abs(v)
    cost.factors = factors
    return factors
