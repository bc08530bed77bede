"""Aggressive space mapping over a fine/coarse model pair.

The fine model is evaluation-only: the framework never requests fine-model
derivatives, and every evaluation is counted.  Each step extracts the coarse
design whose (scaled) response best matches the latest fine response, then
drives the extracted parameter toward the coarse optimum with a Broyden
rank-one update of the mapping Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import optimize
from .linesearch import LineSearchConfig
from .optimize import OptimizerConfig


class ExtractionError(RuntimeError):
    """Parameter extraction did not converge; carries the best design found."""

    def __init__(self, message: str, best: np.ndarray):
        super().__init__(message)
        self.best = best


class StepFailureError(RuntimeError):
    """The mapping Jacobian stayed singular after a reset to the identity."""


class FineModel:
    """Evaluation-only wrapper around an expensive response function.

    Only `evaluate` exists on purpose: space mapping must work without fine
    derivatives, and the evaluation counter is the instrumented proof.
    """

    def __init__(self, func: Callable[[np.ndarray], np.ndarray]):
        self._func = func
        self.evaluations = 0

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        self.evaluations += 1
        return np.asarray(self._func(np.asarray(x, dtype=float)), dtype=float)


class CoarseModel:
    """Cheap surrogate: response, its Jacobian, and its own optimizer.

    Subclasses implement response / response_jacobian / optimize.  The
    misalignment used for extraction is 1/2 ||(response(z) - r) / scale||^2,
    with scale fixed to the coarse optimum's response magnitude.
    """

    def response(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def response_jacobian(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def optimize(self) -> np.ndarray:
        raise NotImplementedError

    def misalignment(self, z: np.ndarray, r: np.ndarray, scale: float = 1.0) -> float:
        d = (self.response(z) - r) / scale
        return 0.5 * float(d @ d)


class _Misalignment:
    """Reduced-functional adapter for the extraction problem."""

    def __init__(self, coarse: CoarseModel, r: np.ndarray, scale: float):
        self.coarse = coarse
        self.r = r
        self.scale = scale

    def evaluate(self, z):
        return self.coarse.misalignment(z, self.r, self.scale)

    def gradient(self, z):
        d = (self.coarse.response(z) - self.r) / self.scale
        return self.coarse.response_jacobian(z).T @ d / self.scale

    def inner(self, a, b):
        return float(a @ b)

    def norm(self, a):
        return float(np.linalg.norm(a))


def parameter_extraction(coarse: CoarseModel, r: np.ndarray, z_start: np.ndarray,
                         scale: float = 1.0, rtol: float = 1e-8) -> np.ndarray:
    """argmin_z 1/2 ||(c(z) - r)/scale||^2, warm-started from z_start."""
    cfg = OptimizerConfig(algorithm="lbfgs", rtol=rtol, atol=1e-12, max_iter=200,
                          linesearch=LineSearchConfig(method="polynomial"))
    result = optimize.minimize(_Misalignment(coarse, r, scale), z_start, cfg)
    if not result.converged:
        raise ExtractionError(
            f"parameter extraction did not converge ({result.message})", result.q
        )
    return result.q


@dataclass
class SpaceMappingConfig:
    tol: float = 1e-3  # relative to ||z*||, absolute when z* = 0
    max_iter: int = 25


@dataclass
class SpaceMappingRecord:
    iteration: int
    distance: float  # ||p_k - z*||
    fine_evaluations: int
    x: np.ndarray
    response: np.ndarray


@dataclass
class SpaceMappingResult:
    x: np.ndarray
    history: list[SpaceMappingRecord]
    converged: bool
    fine_evaluations: int
    updates: list = field(default_factory=list)  # (dx, dp, B_after) per Broyden update
    message: str = ""

    @property
    def iterations(self) -> int:
        return self.history[-1].iteration if self.history else 0


def broyden_update(b: np.ndarray, dx: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Rank-one secant update B + (dp - B dx) dx^T / <dx, dx>."""
    dx2 = float(dx @ dx)
    return b + np.outer(dp - b @ dx, dx) / dx2


def solve(fine: FineModel, coarse: CoarseModel, cfg: SpaceMappingConfig | None = None,
          callback: Callable | None = None,
          validator: Callable[[np.ndarray], bool] | None = None) -> SpaceMappingResult:
    """Aggressive space mapping: iterate x until the extracted parameter hits z*.

    Solves B h = -(p_k - z*), x_{k+1} = x_k + h, with p the extraction of the
    fine response and B updated by Broyden's rank-one formula.  The history
    records ||p_k - z*|| and the running fine-evaluation count; exactly one
    fine evaluation happens per iteration plus one for the start.

    validator, when given, is a cheap feasibility test of a trial design (for
    shape designs: does the deformation produce a valid mesh); the step is
    halved until it passes, which costs no fine evaluations.
    """
    if cfg is None:
        cfg = SpaceMappingConfig()
    z_star = np.asarray(coarse.optimize(), dtype=float)
    scale = float(np.linalg.norm(coarse.response(z_star)))
    if scale == 0.0:
        scale = 1.0
    z_norm = float(np.linalg.norm(z_star))
    tol = cfg.tol * z_norm if z_norm > 0.0 else cfg.tol

    x = z_star.copy()
    b = np.eye(len(z_star))
    r = fine.evaluate(x)
    p = parameter_extraction(coarse, r, z_star, scale)
    dist = float(np.linalg.norm(p - z_star))
    history = [SpaceMappingRecord(0, dist, fine.evaluations, x.copy(), r.copy())]
    updates: list = []
    if callback is not None:
        callback(history[-1])

    for it in range(1, cfg.max_iter + 1):
        if dist <= tol:
            return SpaceMappingResult(x, history, True, fine.evaluations, updates,
                                      "extracted parameter reached the coarse optimum")
        try:
            h = np.linalg.solve(b, -(p - z_star))
        except np.linalg.LinAlgError:
            b = np.eye(len(z_star))
            try:
                h = np.linalg.solve(b, -(p - z_star))
            except np.linalg.LinAlgError:  # pragma: no cover - identity cannot fail
                raise StepFailureError("mapping Jacobian solve failed twice")
        if validator is not None:
            t = 1.0
            while t > 2.0**-60 and not validator(x + t * h):
                t *= 0.5
            if t <= 2.0**-60:
                return SpaceMappingResult(x, history, False, fine.evaluations, updates,
                                          "no feasible step direction")
            h = t * h
        x = x + h
        r = fine.evaluate(x)
        p_new = parameter_extraction(coarse, r, p, scale)
        dx, dp = h, p_new - p
        if float(np.linalg.norm(dx)) >= 1e-14:
            b = broyden_update(b, dx, dp)
            updates.append((dx.copy(), dp.copy(), b.copy()))
        p = p_new
        dist = float(np.linalg.norm(p - z_star))
        history.append(SpaceMappingRecord(it, dist, fine.evaluations, x.copy(), r.copy()))
        if callback is not None:
            callback(history[-1])

    converged = dist <= tol
    msg = "converged" if converged else "maximum iterations reached"
    return SpaceMappingResult(x, history, converged, fine.evaluations, updates, msg)
