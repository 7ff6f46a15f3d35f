import numpy as np
import pytest

from softphoton.matter import ChargeModel
from softphoton.spectral import build_kgrid


@pytest.fixture(scope="session")
def small_grid():
    return build_kgrid(16, 1e-3, 8.0, 4, 4)


@pytest.fixture(scope="session")
def grid():
    return build_kgrid(32, 1e-3, 8.0, 8, 8)


@pytest.fixture(scope="session")
def model():
    return ChargeModel(0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_pair(grid, rng, scale=1.0):
    from softphoton.spectral import SpectralFieldPair

    shape = grid.shape
    e = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    b = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return SpectralFieldPair(e, b)
