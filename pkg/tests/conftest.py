import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def within_sigma(observed, expected, sigma, k=3.0):
    return abs(observed - expected) <= k * sigma
