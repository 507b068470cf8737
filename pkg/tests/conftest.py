import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ndlab", max_examples=30, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("ndlab")


@pytest.fixture(scope="session")
def box9():
    from ndlab.geometry import build_domain

    return build_domain({"shape": "box", "extents": [[0, 1]] * 3, "resolution": [9] * 3})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
