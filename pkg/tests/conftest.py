import numpy as np
import pytest

from ifslab import reference, simulator


@pytest.fixture(scope="session")
def half():
    return reference.half()


@pytest.fixture(scope="session")
def tilt():
    return reference.tilt()


@pytest.fixture(scope="session")
def expanding():
    return reference.expanding()


@pytest.fixture(scope="session")
def nu_half(half):
    """Invariant-measure estimate for HALF at the acceptance scale."""
    return simulator.estimate_invariant(half, n=10**6, burn_in=1000, seed=11)


@pytest.fixture(scope="session")
def half_path(half):
    return simulator.simulate(half, None, 10**6, 1000, seed=12)


@pytest.fixture
def unit_grid():
    return np.linspace(0.0, 1.0, 1001)[:, None]
