"""Adjoint-based PDE-constrained optimization on a minimal 2D P1 FEM kernel.

Subpackages cover the problem classes: optimal control (reduced, optimize),
shape optimization (shapeopt), level-set topology optimization (topopt),
penalty/augmented-Lagrangian constraint handling (constraints), and aggressive
space mapping (spacemapping), all over the mesh/fem kernel, with named demo
problems behind a config-file CLI (cli).
"""

from . import (  # noqa: F401
    constraints,
    costfunctional,
    fem,
    flow,
    linesearch,
    mesh,
    optimize,
    problems,
    reduced,
    shapeopt,
    spacemapping,
    topopt,
)

__version__ = "0.1.0"
