import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from dataset.lattice import build_neighbor_graph, lattice_from_tiles  # noqa: E402
from model.basis import BasisSystem  # noqa: E402
from model.spectrum import periodogram_set  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale experiments (deselect with -m 'not slow')")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def small_problem():
    ''' 2 x 3 lattice of 8 x 8 white-noise tiles with an l = 4 basis (L = 16) '''
    gen = np.random.default_rng(7)
    tiles = gen.standard_normal((6, 8, 8)) * np.array([0.5, 1.0, 2.0, 0.5, 1.0, 2.0])[:, None, None]
    lat = lattice_from_tiles(tiles, 2, 3)
    return {
        'lat': lat,
        'P': periodogram_set(lat),
        'basis': BasisSystem.build(8, 4),
        'graph': build_neighbor_graph(2, 3),
    }
