import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from dataset.lattice import GridField, lattice_from_tiles
from model.basis import BasisSystem
from model.spectrum import FrequencyGrid, PeriodogramSet, periodogram_2d, periodogram_set, smoothed_log_periodogram
from utils.errors import DegenerateInputError, ValidationError


def direct_periodogram(z):
    ''' O(n^2) double sum over sites and frequencies '''
    side = z.shape[0]
    grid = FrequencyGrid.build(side)
    x1, x2 = np.meshgrid(np.arange(side), np.arange(side), indexing='ij')
    out = np.empty(grid.n)
    for j, (u, v) in enumerate(grid.freqs):
        phase = np.exp(-2j * np.pi * (u * x1 + v * x2))
        out[j] = np.abs(np.sum(z * phase)) ** 2 / z.size
    return out


class TestPeriodogram:
    def test_zero_field(self):
        assert_array_equal(periodogram_2d(GridField(np.zeros((8, 8)))), 0.0)

    def test_cosine_concentrates(self):
        x = np.arange(8)
        z = np.tile(np.cos(2 * np.pi * 2 * x / 8), (8, 1))
        I = periodogram_2d(GridField(z)).reshape(8, 8)
        assert_allclose(I[0, 2], 16.0)
        assert_allclose(I[0, 6], 16.0)
        mask = np.ones((8, 8), dtype=bool)
        mask[0, 2] = mask[0, 6] = False
        assert np.max(np.abs(I[mask])) < 1e-10

    @pytest.mark.parametrize("side", range(2, 9))
    def test_matches_direct_sum_and_parseval(self, side, rng):
        for _ in range(50):
            z = rng.standard_normal((side, side))
            fast = periodogram_2d(GridField(z))
            assert_allclose(fast, direct_periodogram(z), rtol=1e-10, atol=1e-10 * np.abs(z).sum() ** 2)
            assert_allclose(fast.sum(), np.sum(z ** 2), rtol=1e-8)

    def test_circular_shift_invariance(self, rng):
        for _ in range(20):
            z = rng.standard_normal((8, 8))
            shifted = np.roll(z, shift=tuple(rng.integers(0, 8, 2)), axis=(0, 1))
            assert_allclose(periodogram_2d(GridField(shifted)), periodogram_2d(GridField(z)), rtol=1e-10,
                            atol=1e-10 * np.sum(z ** 2))

    def test_scaling(self, rng):
        z = rng.standard_normal((6, 6))
        c = rng.uniform(-5.0, 5.0)
        assert_allclose(periodogram_2d(GridField(c * z)), c ** 2 * periodogram_2d(GridField(z)), rtol=1e-10,
                        atol=1e-12 * c ** 2 * np.sum(z ** 2))

    def test_non_square(self):
        with pytest.raises(ValidationError):
            periodogram_2d(GridField(np.zeros((4, 6))))


class TestPeriodogramSet:
    def test_zero_lattice_is_degenerate(self):
        with pytest.raises(DegenerateInputError):
            periodogram_set(lattice_from_tiles(np.zeros((4, 6, 6)), 2, 2))

    def test_identical_subregions(self, rng):
        tile = rng.standard_normal((6, 6))
        P = periodogram_set(lattice_from_tiles(np.stack([tile, tile]), 1, 2))
        assert_array_equal(P.I[0], P.I[1])

    def test_positive_after_floor(self, rng):
        P = periodogram_set(lattice_from_tiles(rng.standard_normal((3, 8, 8)), 1, 3))
        assert P.I.shape == (3, 64)
        assert np.all(P.I > 0)
        # demeaning zeroes the origin ordinate, which the floor lifts
        assert_allclose(P.I[:, 0], P.floor)


class TestSmoothedLogPeriodogram:
    def test_span_is_fixed(self, rng):
        basis = BasisSystem.build(8, 4)
        logI = basis.B @ rng.standard_normal((16, 3))
        P = PeriodogramSet(I=np.exp(logI.T), floor=0.0, side=8)
        assert_allclose(smoothed_log_periodogram(P, basis), logI, atol=1e-10)

    def test_constant_reproduced(self):
        basis = BasisSystem.build(8, 4)
        P = PeriodogramSet(I=np.full((2, 64), np.exp(1.5)), floor=0.0, side=8)
        assert_allclose(smoothed_log_periodogram(P, basis), 1.5, atol=1e-10)

    def test_residual_orthogonal(self, small_problem):
        P, basis = small_problem['P'], small_problem['basis']
        resid = P.log().T - smoothed_log_periodogram(P, basis)
        assert_allclose(basis.B.T @ resid, 0.0, atol=1e-8)

    def test_grid_mismatch(self, small_problem):
        with pytest.raises(ValidationError):
            smoothed_log_periodogram(small_problem['P'], BasisSystem.build(10, 4))
