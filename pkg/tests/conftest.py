import numpy as np
import pytest

from robinlab.mesh import build_interval_mesh, build_polygon_mesh

UNIT_SQUARE = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
L_SHAPE = [(0.0, 0.0), (1.0, 0.0), (1.0, 0.5), (0.5, 0.5), (0.5, 1.0), (0.0, 1.0)]


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def square_mesh():
    return build_polygon_mesh(UNIT_SQUARE, 0.125)


@pytest.fixture(scope="session")
def coarse_square_mesh():
    return build_polygon_mesh(UNIT_SQUARE, 0.25)


@pytest.fixture(scope="session")
def interval_mesh():
    return build_interval_mesh(0.0, 1.0, 32)
