import numpy as np
import pytest

from d2dcache.model import GroupProfile, SystemParams


@pytest.fixture(scope="session")
def params():
    """alpha=3, gamma_th=3 dB, 15/20 dBm, lambda_B=1e-4, R=15 m."""
    return SystemParams.from_db()


@pytest.fixture(scope="session")
def fig1_groups():
    return GroupProfile([0.1, 0.1, 0.1], [0.1, 0.3, 0.6])


@pytest.fixture(scope="session")
def fig1_c():
    return np.array([0.05, 0.09, 0.08])


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
