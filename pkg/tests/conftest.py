import numpy as np
import pytest

from elastoscan.core import IncidentWave, Material, make_sphere_grid
from elastoscan.forward import MfsConfig


@pytest.fixture(scope="session")
def material():
    return Material(2.0, 1.0)


@pytest.fixture(scope="session")
def shear_wave():
    return IncidentWave((0.0, 0.0, 1.0), (1.0, 0.0, 0.0), 0.0, 1.0, 2.0)


@pytest.fixture(scope="session")
def pressure_wave():
    return IncidentWave((0.0, 0.0, 1.0), (1.0, 0.0, 0.0), 1.0, 0.0, 2.0)


@pytest.fixture(scope="session")
def coarse_grid():
    return make_sphere_grid(16, 32)


@pytest.fixture(scope="session")
def grid():
    return make_sphere_grid(24, 48)


@pytest.fixture(scope="session")
def fast_mfs():
    return MfsConfig(n_sources=150, n_collocation=450)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_library(material, shear_wave, coarse_grid, fast_mfs):
    """Ball and Peanut, two orientations about y, unit scale, on the coarse grid."""
    from elastoscan.library import build_library
    return build_library(["ball", "peanut"], 4, [1.0], material, shear_wave, coarse_grid, fast_mfs)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    RESULTS = getattr(module, "RESULTS", {})
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
