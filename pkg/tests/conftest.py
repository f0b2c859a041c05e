import numpy as np
import pytest

from grassrom.dynsys import generate_trajectories


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def toy_data():
    """Small toy dataset: 4 trajectories x 50 stamps = 200 samples."""
    return generate_trajectories(4, n_stamps=50, seed=7)


def random_dataset(rng, M=40, n=2, m=5):
    from grassrom.dataset import Dataset
    x = rng.standard_normal((M, m))
    f = rng.standard_normal((M, n))
    jac = rng.standard_normal((M, n, m))
    return Dataset(x, f, jac)
