import math

import numpy as np
import pytest

from nilswitch.chart import adjoint_from_lifts
from nilswitch.example_kepler import example_system
from nilswitch.pmp import CotangentPoint, lift_values

SEED = 20240611


@pytest.fixture(scope="session")
def example():
    return example_system()


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


def sigma_minus_point(sys, p1=0.4, x=(0.2, 0.5, 0.1, -0.3), p4=1.0):
    """A point of Sigma_- of the example system; a = H12 / r = -p1 / r."""
    x = np.asarray(x, dtype=float)
    return CotangentPoint(x, [p1, 0.0, -p1 * x[1], p4])


def sigma0_point(orientation=1, x2=0.5):
    """A Sigma_0 point of the example system with H12 = orientation * r."""
    p1 = -float(orientation)
    return CotangentPoint([0.2, x2, 0.1, -0.3], [p1, 0.0, -p1 * x2, math.sqrt(1 - x2**4)])


SIGMA_PLUS_X = np.array([0.826, 0.713, 0.459, 0.087])
SIGMA_PLUS_PHI = 2.734


def near_sigma_plus(sys, rho, theta):
    lifts = (rho * math.cos(theta), rho * math.sin(theta),
             math.cos(SIGMA_PLUS_PHI), math.sin(SIGMA_PLUS_PHI))
    return CotangentPoint(SIGMA_PLUS_X, adjoint_from_lifts(sys, SIGMA_PLUS_X, lifts))


def random_off_sigma_points(sys, rng, n, min_rho=0.05):
    out = []
    while len(out) < n:
        z = CotangentPoint(rng.uniform(-1.5, 1.5, 4), rng.normal(size=4))
        if abs(z.x[1]) > 0.2 and lift_values(sys, z).rho > min_rho:
            out.append(z)
    return out


# --- acceptance summary ----------------------------------------------------------------

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
