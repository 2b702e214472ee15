import numpy as np
import pytest

from qlconc.shooting import ShootConfig, find_ground_state


@pytest.fixture(scope="session")
def ground_n5():
    """Zero-mass ground state for N=5, p=4, m=1 (shared: shooting takes a few seconds)."""
    return find_ground_state(ShootConfig(N=5, p=4.0, m=1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
