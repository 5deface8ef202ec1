import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import helpers

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture
def tiny_params():
    return helpers.tiny_params()


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)
