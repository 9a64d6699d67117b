import numpy as np
import pytest

from remd.field import Grid2D, ScalarField


def rand_field(n, seed=0, m=None, **grid_kw) -> ScalarField:
    g = Grid2D(n, m or n, **grid_kw)
    return ScalarField(g, np.random.default_rng(seed).standard_normal(g.shape))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
