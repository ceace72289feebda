"""
Shared pytest fixtures: catalog models and small disturbance families
"""
import pytest

from flow import build_model
from signals import DisturbanceFamily, Signal, sample_family


@pytest.fixture
def rfc_model():
    return build_model('scalar_rfc')


@pytest.fixture
def xu_model():
    return build_model('scalar_xu', radius=1.0)


@pytest.fixture
def decay_model():
    return build_model('decay_plus_input')


@pytest.fixture
def contraction_model():
    return build_model('linear', {'A': [[-1.0]], 'B': [[0.0]]})


@pytest.fixture
def quadratic_model():
    return build_model('quadratic')


@pytest.fixture
def constant_family():
    """u = -1, 0, 1 held forever"""
    return DisturbanceFamily.from_members([Signal.constant(v) for v in (-1.0, 0.0, 1.0)], 1.0, 0.5)


@pytest.fixture
def unit_family():
    return sample_family(1.0, 0.5, 3, 4, 1.0, seed=7)
