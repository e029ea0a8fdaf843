import numpy as np
import pytest
from scipy.special import comb

from dataset.lattice import build_neighbor_graph
from eval.metrics import adjusted_rand, isolated_count, jaccard, pair_counts
from utils.errors import ValidationError

A5 = [1, 1, 2, 2, 2]
B5 = [1, 1, 1, 2, 2]


def brute_pairs(a, b):
    n11 = n10 = n01 = n00 = 0
    for i in range(len(a)):
        for j in range(i + 1, len(a)):
            sa, sb = a[i] == a[j], b[i] == b[j]
            n11 += sa and sb
            n10 += sa and not sb
            n01 += sb and not sa
            n00 += not sa and not sb
    return n11, n10, n01, n00


class TestPairCounts:
    def test_identical(self):
        _, n10, n01, _ = pair_counts(A5, A5)
        assert n10 == 0 and n01 == 0

    def test_one_cluster_vs_singletons(self):
        assert pair_counts([1, 1, 1, 1], [1, 2, 3, 4]) == (0, 6, 0, 0)

    def test_hand_example(self):
        assert pair_counts(A5, B5) == (2, 2, 2, 4)

    def test_matches_enumeration(self, rng):
        for _ in range(50):
            a, b = rng.integers(0, 4, 12), rng.integers(0, 3, 12)
            assert pair_counts(a, b) == brute_pairs(a, b)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            pair_counts([1, 2], [1, 2, 3])


class TestIndices:
    def test_hand_example(self):
        table = np.array([[2, 0], [1, 2]])
        index = comb(table, 2).sum()
        rows, cols = comb(table.sum(axis=1), 2).sum(), comb(table.sum(axis=0), 2).sum()
        expected = rows * cols / comb(5, 2)
        ari = (index - expected) / (0.5 * (rows + cols) - expected)
        assert adjusted_rand(A5, B5) == pytest.approx(ari, abs=1e-12)
        assert jaccard(A5, B5) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_identical(self):
        assert adjusted_rand(A5, [7, 7, 3, 3, 3]) == 1.0
        assert jaccard(A5, [7, 7, 3, 3, 3]) == 1.0

    def test_degenerate_partitions(self):
        assert adjusted_rand([1, 1, 1], [2, 2, 2]) == 1.0
        assert adjusted_rand([1, 2, 3], [3, 1, 2]) == 1.0
        assert jaccard([1, 2, 3], [1, 2, 3]) == 1.0

    def test_no_shared_pairs(self):
        assert jaccard([1, 1, 2, 2], [1, 2, 1, 2]) == 0.0

    def test_symmetry_relabelling_bounds(self, rng):
        for _ in range(1000):
            m = int(rng.integers(2, 30))
            a, b = rng.integers(0, 4, m), rng.integers(0, 4, m)
            perm = rng.permutation(4)
            ari = adjusted_rand(a, b)
            assert ari == pytest.approx(adjusted_rand(b, a), abs=1e-12)
            assert ari == pytest.approx(adjusted_rand(perm[a], b), abs=1e-12)
            assert jaccard(a, b) == pytest.approx(jaccard(b, a), abs=1e-12)
            assert ari <= 1.0 + 1e-12

    def test_random_labelings_near_zero(self, rng):
        values = [adjusted_rand(rng.integers(0, 3, 200), rng.integers(0, 3, 200)) for _ in range(100)]
        assert abs(np.mean(values)) < 0.05


class TestIsolated:
    def test_checkerboard(self):
        labels = np.array([(r + c) % 2 for r in range(3) for c in range(3)])
        assert isolated_count(labels, build_neighbor_graph(3, 3)) == 9

    def test_column_bands(self):
        labels = np.array([c // 2 for r in range(3) for c in range(4)])
        assert isolated_count(labels, build_neighbor_graph(3, 4)) == 0
