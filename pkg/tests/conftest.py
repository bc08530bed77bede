import numpy as np
import pytest

from pdeopt import problems


@pytest.fixture(scope="session")
def poisson_control_16():
    """Shared Poisson control setup on unit_square(16)."""
    return problems.build_poisson_control(resolution=16, alpha=1e-4)


@pytest.fixture(scope="session")
def shape_demo():
    """Shared Poisson shape functional and the unit-disk start mesh."""
    mesh, problem = problems.build_shape_poisson(rings=8)
    return mesh, problem


def all_boundary_bcs(mesh, value=0.0):
    from pdeopt import fem

    return [fem.DirichletBC(mk, value) for mk in sorted(mesh.marker_set())]


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
