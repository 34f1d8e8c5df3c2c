import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("riskdp", deadline=None, max_examples=60)
settings.load_profile("riskdp")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
