import numpy as np
import pytest

from app.cache import amplification_cache, factorization_cache
from app.models import KGridPlan, LevelGeometry


@pytest.fixture(autouse=True)
def clear_caches():
    amplification_cache.clear()
    factorization_cache.clear()
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def geom64():
    return LevelGeometry(finest_points=64, dimension=1)


@pytest.fixture
def two_grid_1d():
    return KGridPlan(dimension=1, levels=2, finest_points=64, sigma=-500.0)
