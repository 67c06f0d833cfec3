import math

import numpy as np
import pytest

from latticesr.lattice_params import RB85, LatticeConfig, derive_lattice, lattice_for_targets
from latticesr.specfit import FitModel

THETA = math.radians(25.0)


@pytest.fixture(scope="session")
def spectrum_config():
    return LatticeConfig.from_gamma_units(5.2, -12.0)


@pytest.fixture(scope="session")
def spectrum_lattice(spectrum_config):
    return derive_lattice(RB85, spectrum_config)


@pytest.fixture(scope="session")
def transport_lattice():
    return lattice_for_targets(400.0, 5.7, THETA)


def random_fit_draw(rng: np.random.Generator):
    """A plausible transmission-spectrum model (kHz) together with the lattice used
    to seed its fit.  True centers sit 0-30% above the lattice frequencies."""
    lat = lattice_for_targets(rng.uniform(200, 500), 5.0)
    oz, ox = lat.to_khz(lat.Omega_Z), lat.to_khz(lat.Omega_X)
    tz = oz * rng.uniform(1.0, 1.25)
    tb = ox * rng.uniform(1.0, 1.3)
    m = FitModel(
        A_Z1=rng.uniform(0.4, 0.8), A_Z2=-rng.uniform(0.4, 0.8),
        A_B1=rng.uniform(0.3, 0.6), A_B2=-rng.uniform(0.3, 0.6),
        Omega_Z1=tz * rng.uniform(0.97, 1.03), Omega_Z2=-tz * rng.uniform(0.97, 1.03),
        Omega_B1=tb, Omega_B2=-tb * rng.uniform(0.97, 1.03),
        sigma_Z1=0.12 * tz * rng.uniform(0.8, 1.2), sigma_Z2=0.12 * tz * rng.uniform(0.8, 1.2),
        sigma_B1=0.12 * tb * rng.uniform(0.8, 1.2),
        a1=1.0, a2=rng.uniform(-1e-4, 1e-4), a3=rng.uniform(5.0, 12.5), a4=rng.uniform(-1.5, 1.5),
        x0=rng.uniform(-1, 1), gamma_width=5.0,
    )
    return lat, m


SPECTRUM_GRID_KHZ = np.linspace(-300.0, 300.0, 2001)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
