import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


ZHAT = np.array([0.0, 0.0, 1.0])


@pytest.fixture
def zhat():
    return ZHAT.copy()
