import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from katolab.grid import PotentialSpec, box_grid, radial_grid, sample_potential  # noqa: E402
from katolab.spectral import assemble_hamiltonian, diagonalize  # noqa: E402

# the standard weak attractive well used across the studies (Kato norm pi, no bound state)
SMALL_WELL = PotentialSpec.gaussian(0.5, 1.0)

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def spectral(grid, pot=None):
    V = np.zeros(grid.size) if pot is None else sample_potential(grid, pot)
    return diagonalize(assemble_hamiltonian(grid, V))


@pytest.fixture(scope="session")
def radial_small():
    return radial_grid(10.0, 400)


@pytest.fixture(scope="session")
def radial_small_free(radial_small):
    return spectral(radial_small)


@pytest.fixture(scope="session")
def radial_small_well(radial_small):
    return spectral(radial_small, SMALL_WELL)


@pytest.fixture(scope="session")
def radial1000():
    return radial_grid(10.0, 1000)


@pytest.fixture(scope="session")
def radial1000_free(radial1000):
    return spectral(radial1000)


@pytest.fixture(scope="session")
def radial1000_well(radial1000):
    return spectral(radial1000, SMALL_WELL)


@pytest.fixture(scope="session")
def radial2000():
    return radial_grid(10.0, 2000)


@pytest.fixture(scope="session")
def radial2000_free(radial2000):
    return spectral(radial2000)


@pytest.fixture(scope="session")
def radial2000_well(radial2000):
    return spectral(radial2000, SMALL_WELL)


@pytest.fixture(scope="session")
def box8():
    return box_grid(2.0, 8)


@pytest.fixture(scope="session")
def box8_free(box8):
    return spectral(box8)


@pytest.fixture(scope="session")
def box16():
    return box_grid(4.0, 16)


@pytest.fixture(scope="session")
def box16_free(box16):
    return spectral(box16)


@pytest.fixture(scope="session")
def box16_well(box16):
    return spectral(box16, SMALL_WELL)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
