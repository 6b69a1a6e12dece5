import numpy as np
import pytest

from gslope.slope import constant_sequence, slope_prox


@pytest.fixture(scope="session", autouse=True)
def _warm_numba():
    # compile/load the PAV kernel once so timing-sensitive tests are stable
    slope_prox(np.arange(5.0) - 2.0, constant_sequence(5, 0.1), 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, p, ridge=1.0):
    A = rng.normal(size=(p, p))
    return A @ A.T / p + ridge * np.eye(p)
