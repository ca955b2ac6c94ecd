import math

import numpy as np
import pytest

from salt_climate.model_ops import CoriolisField, PhysParams, random_state
from salt_climate.spectral import Grid


@pytest.fixture
def grid():
    return Grid(2 * math.pi, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def params(grid):
    return PhysParams(CoriolisField.sinusoidal(grid, 1.0))


@pytest.fixture
def coupled_params(grid):
    return PhysParams(CoriolisField.sinusoidal(grid, 1.0), gamma=-0.1, sigma=-0.1)


@pytest.fixture
def psi(grid, rng):
    return random_state(grid, rng, kmax=3, amplitude=0.1)


def band_limited(grid, rng, shape=(), kmax=None):
    """Random physical field supported on the retained modes."""
    from salt_climate.spectral import dealias, to_physical, to_spectral

    f = rng.standard_normal(shape + grid.shape)
    fh = dealias(to_spectral(f, grid), grid)
    if kmax is not None:
        fh = fh * ((grid.mode_x**2 + grid.mode_y**2) <= kmax**2)
    return to_physical(fh, grid)
