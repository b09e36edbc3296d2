import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from abcd_ocp.harness.config import ProblemTemplate

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")

STANDARD = ProblemTemplate()
# sign-changing target: gives zero, positive and negative control entries on coarse meshes
MIXED = ProblemTemplate(beta=0.02, yd="3*sin(2*pi*x)*sin(pi*y) + 0.5")

_cache = {}


def build(template: ProblemTemplate, n_side: int):
    key = (template, n_side)
    if key not in _cache:
        _cache[key] = template.build(n_side)
    return _cache[key]


@pytest.fixture
def standard():
    return lambda n: build(STANDARD, n)


@pytest.fixture
def mixed():
    return lambda n: build(MIXED, n)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
