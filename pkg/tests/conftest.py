import numpy as np
import pytest

from nkd.landscape import NkLandscape
from nkd.prng import SeedPath, Tag


@pytest.fixture
def path():
    return SeedPath(2024, ((Tag.LANDSCAPE, 0),))


def hand_landscape(neighbors, tables):
    return NkLandscape(len(tables), len(neighbors[0]) if neighbors else 0,
                       np.asarray(neighbors, dtype=np.int64).reshape(len(tables), -1),
                       np.asarray(tables, dtype=np.float64))
