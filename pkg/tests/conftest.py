"""
Shared fixtures: manifolds, the model zoo and small samples
"""

import numpy as np
import pytest

from app.schemas.analysis import SampleSpec
from app.schemas.scenario import ModelSpec
from app.services.geometry import ChartPoint, build_manifold
from app.services.models import build_hamiltonian, build_lagrangian

# sphere endpoints at angular distance 1, symmetric about the south pole in chart N
SPHERE_HALF_CHORD = float(np.tan(0.25))


@pytest.fixture(scope="session")
def torus1():
    return build_manifold("torus1")


@pytest.fixture(scope="session")
def torus2():
    return build_manifold("torus2")


@pytest.fixture(scope="session")
def sphere():
    return build_manifold("sphere2")


@pytest.fixture(scope="session")
def small_sample():
    return SampleSpec(n_radii=21, n_directions=4, q_per_axis=3, t_values=[0.0, 0.5])


@pytest.fixture(scope="session")
def free_particle(torus2):
    return build_lagrangian(ModelSpec(kind="mechanical"), torus2)


@pytest.fixture(scope="session")
def mechanical(torus2):
    return build_lagrangian(ModelSpec(kind="mechanical", potential="cos2", epsilon=0.1), torus2)


@pytest.fixture(scope="session")
def quartic(torus2):
    return build_lagrangian(ModelSpec(kind="quartic"), torus2)


@pytest.fixture(scope="session")
def sphere_free(sphere):
    return build_lagrangian(ModelSpec(kind="mechanical"), sphere)


@pytest.fixture(scope="session")
def pendulum_hamiltonian(torus1):
    """H = |p|^2 / 2 + cos(2 pi q)"""
    return build_hamiltonian(ModelSpec(kind="mechanical", potential="cos2", epsilon=1.0), torus1)


@pytest.fixture(scope="session")
def sphere_endpoints():
    return (ChartPoint("N", [SPHERE_HALF_CHORD, 0.0]), ChartPoint("N", [-SPHERE_HALF_CHORD, 0.0]))
