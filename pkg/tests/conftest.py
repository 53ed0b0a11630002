import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

os.environ.setdefault("NSLAB_THREADS", "1")

settings.register_profile("nslab", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("nslab")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
