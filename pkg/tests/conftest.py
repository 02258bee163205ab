import numpy as np
import pytest

from diffeoraptor.fourier import BandlimitedVelocity, spectral_grid
from diffeoraptor.volume import smooth


def random_velocity(full_dims, trunc_dims, rng, scale=1.0, sigma=1.5):
    """Smooth random real field projected onto the band, max |field| about ``scale``."""
    grid = spectral_grid(tuple(full_dims), tuple(trunc_dims))
    dense = np.stack([smooth(rng.normal(size=full_dims), sigma) for _ in range(3)])
    coeffs = grid.project(dense)
    peak = np.abs(grid.lift(coeffs)).max()
    return BandlimitedVelocity(coeffs * (scale / peak), full_dims, trunc_dims)


def random_hermitian(grid, rng, leading=(3,)):
    c = rng.normal(size=leading + grid.band_shape) + 1j * rng.normal(size=leading + grid.band_shape)
    return grid.hermitian_part(c)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# (criterion, passed, detail) rows filled by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE, key=lambda row: row[0]):
        terminalreporter.write_line(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")
