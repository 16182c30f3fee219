import numpy as np
import pytest

from brwcap import green, offspring


@pytest.fixture(scope="session")
def mu_binary():
    return offspring.preset("binary")


@pytest.fixture(scope="session")
def table10():
    """Shared d=5 Green table, radius 10 (seconds to build)."""
    return green.build_green_table(5, 10, sigma2=1.0, tol=1e-10)


def rng_for(k0, rep):
    return np.random.Generator(
        np.random.Philox(key=np.array([k0, rep], dtype=np.uint64)))
