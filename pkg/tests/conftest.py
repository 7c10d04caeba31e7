import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("leufm", deadline=None, max_examples=50)
settings.load_profile("leufm")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_counts(rng, k_max=8, n_max=64):
    K = int(rng.integers(2, k_max + 1))
    return [int(c) for c in rng.integers(1, n_max + 1, size=K)]
