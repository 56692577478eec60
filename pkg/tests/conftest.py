import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nlch.torus import ScalarField, TorusGrid

settings.register_profile("nlch", deadline=None, max_examples=30, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("nlch")


def smooth_field(grid: TorusGrid, seed: int, max_mode: int = 3, mean: float | None = None) -> ScalarField:
    """Random trigonometric polynomial with modes |m_j| <= max_mode."""
    rng = np.random.default_rng(seed)
    coeffs = np.zeros(grid.shape, dtype=complex)
    idx = [np.r_[0 : max_mode + 1, grid.n - max_mode : grid.n]] * grid.dim
    sub = np.ix_(*idx)
    coeffs[sub] = rng.normal(size=coeffs[sub].shape) + 1j * rng.normal(size=coeffs[sub].shape)
    vals = np.fft.ifftn(coeffs).real
    vals /= np.abs(vals).max()
    if mean is not None:
        vals += mean - vals.mean()
    return ScalarField(grid, vals)


@pytest.fixture
def grid32():
    return TorusGrid(2, 32)


@pytest.fixture
def grid64():
    return TorusGrid(2, 64)
