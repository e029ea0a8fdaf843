import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from dataset.lattice import lattice_from_tiles
from dataset.simulate import MaternParams, sample_grf
from eval.variogram import cluster_variograms, semivariograms
from utils.errors import ValidationError


class TestSemivariogram:
    def test_constant_is_zero(self):
        lags, gamma = semivariograms(np.full((2, 8, 8), 3.0))
        assert_array_equal(lags, [1, 2, 3, 4])
        assert_array_equal(gamma, 0.0)

    def test_white_noise_flat(self, rng):
        _, gamma = semivariograms(2.0 * rng.standard_normal((10, 32, 32)))
        assert_allclose(gamma.mean(axis=0), 4.0, rtol=0.05)

    def test_exponential_matern(self, rng):
        p = MaternParams(rho=2.0, nu=0.5)
        tiles = np.stack([sample_grf(16, p, rng).values for _ in range(40)])
        lags, gamma = semivariograms(tiles)
        assert_allclose(gamma.mean(axis=0), 1.0 - np.exp(-lags / 2.0), atol=0.15)

    def test_axis_and_diagonal_offsets_only(self):
        yy, xx = np.indices((8, 8))
        checker = (-1.0) ** (yy + xx)
        lags, gamma = semivariograms(checker[None])
        # lag 1: 112 axial pairs differing by 2, 98 diagonal pairs equal
        assert_allclose(gamma[0], [448.0 / 420.0, 0.0, 320.0 / 304.0, 0.0], atol=1e-12)

    def test_max_lag_range(self):
        with pytest.raises(ValidationError):
            semivariograms(np.zeros((1, 4, 4)), max_lag=4)


class TestClusterVariograms:
    def test_bands_and_singletons(self, rng):
        lat = lattice_from_tiles(rng.standard_normal((4, 8, 8)), 2, 2)
        result = cluster_variograms(lat, [1, 1, 1, 2])
        assert [v.label for v in result] == [1, 2]
        full, single = result
        assert not full.band_omitted and np.all(full.lo <= full.mean) and np.all(full.mean <= full.hi)
        assert single.band_omitted and np.all(np.isnan(single.lo))

    def test_label_count(self, rng):
        lat = lattice_from_tiles(rng.standard_normal((4, 8, 8)), 2, 2)
        with pytest.raises(ValidationError):
            cluster_variograms(lat, [1, 2, 3])
