import numpy as np
import pytest

from esnet.spectral import Grid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid1d():
    return Grid(1, 256)


@pytest.fixture
def grid2d():
    return Grid(2, 32)


def band_limited(grid, rng, max_freq=7, amplitude=1.0):
    """Random real field with per-axis frequencies below max_freq + 1, built from
    explicit cos/sin sums (independent of the FFT code paths)."""
    x = grid.x
    m = np.arange(1, max_freq + 1)[:, None]
    basis = np.vstack([np.ones((1, grid.n)), np.cos(np.pi * m * x), np.sin(np.pi * m * x)])
    nb = basis.shape[0]
    if grid.dims == 1:
        u = rng.standard_normal(nb) @ basis
    else:
        u = basis.T @ rng.standard_normal((nb, nb)) @ basis
    return amplitude * u / np.max(np.abs(u))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
