import numpy as np
import pytest

from washboard import EnvironmentParams, JunctionParams

#: high critical-current sample used for spectroscopy and rate magnitudes
HIGH = JunctionParams(i0=14.12e-6, c=3.7e-12, t=0.06)
#: low critical-current sample used for escape-curve fits
LOW = JunctionParams(i0=10.645e-6, c=3.7e-12, t=0.06)


@pytest.fixture
def high():
    return HIGH


@pytest.fixture
def low():
    return LOW


@pytest.fixture
def env():
    return EnvironmentParams()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
