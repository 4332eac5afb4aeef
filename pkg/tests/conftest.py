import numpy as np
import pytest

from dpdice.hashing import HashKey
from dpdice.mpc import FieldParams


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def key():
    return HashKey(bytes(range(16)))


@pytest.fixture(scope="session")
def field():
    return FieldParams.default()


@pytest.fixture(scope="session")
def small_field():
    # small prime with room for 8-bit masks, handy for exhaustive checks
    return FieldParams(1009, lam=4, tau=4)
