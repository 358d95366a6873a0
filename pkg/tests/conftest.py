import numpy as np
import pytest
from hypothesis import settings

from guaranteed_control.bilinear import make_bilinear, terminal_x2
from guaranteed_control.oracle import GridGeometry, dp_quasi_value

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=60)
settings.load_profile("repo")

REFERENCE_GRID = GridGeometry((-1.2, -1.2), (1.2, 1.2), nodes=41, n_t=100)


@pytest.fixture(scope="session")
def bilinear():
    return make_bilinear()


@pytest.fixture(scope="session")
def bilinear_table(bilinear):
    """Lower-value table on the reference grid (about 8 s, built once)."""
    return dp_quasi_value(bilinear, terminal_x2, REFERENCE_GRID)


@pytest.fixture(scope="session")
def coarse_table(bilinear):
    return dp_quasi_value(bilinear, terminal_x2, GridGeometry((-1.6, -1.6), (1.6, 1.6), 17, 40))


def unit_vector(*c):
    return np.array(c, dtype=float)
