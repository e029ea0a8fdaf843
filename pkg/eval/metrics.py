from dataclasses import dataclass

import numpy as np
from scipy.special import comb
from sklearn.metrics.cluster import contingency_matrix

from utils.errors import ValidationError


@dataclass(frozen=True)
class Partition:
    ''' cluster id per observation; ids are arbitrary labels '''
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.size == 0:
            raise ValidationError(f"labels must be a non-empty 1D sequence, got shape {labels.shape}")
        object.__setattr__(self, 'labels', labels)

    @property
    def m(self):
        return self.labels.size


def _as_partition(p):
    return p if isinstance(p, Partition) else Partition(np.asarray(p))


def pair_counts(a, b):
    """2 x 2 table over all C(m, 2) observation pairs.

    Return:
        (n11, n10, n01, n00): co-members in both, in a only, in b only, in neither.
    """
    a, b = _as_partition(a), _as_partition(b)
    if a.m != b.m:
        raise ValidationError(f"partitions have different lengths: {a.m} vs {b.m}")
    table = contingency_matrix(a.labels, b.labels)
    both = int(comb(table, 2, exact=False).sum().round())
    in_a = int(comb(table.sum(axis=1), 2, exact=False).sum().round())
    in_b = int(comb(table.sum(axis=0), 2, exact=False).sum().round())
    total = a.m * (a.m - 1) // 2
    n10, n01 = in_a - both, in_b - both
    return both, n10, n01, total - both - n10 - n01


def adjusted_rand(a, b):
    ''' Hubert-Arabie ARI; when expected and maximum index coincide: 1 for equal partitions, else 0 '''
    n11, n10, n01, n00 = pair_counts(a, b)
    total = n11 + n10 + n01 + n00
    sum_a, sum_b = n11 + n10, n11 + n01
    expected = sum_a * sum_b / total if total > 0 else 0.0
    maximum = 0.5 * (sum_a + sum_b)
    if maximum == expected:
        return 1.0 if (n10 == 0 and n01 == 0) else 0.0
    return float((n11 - expected) / (maximum - expected))


def jaccard(a, b):
    n11, n10, n01, _ = pair_counts(a, b)
    denom = n11 + n10 + n01
    if denom == 0:
        # no co-member pair anywhere: both partitions are all singletons
        return 1.0
    return n11 / denom


def isolated_count(labels, graph):
    ''' subregions with at least one lattice neighbour whose neighbours all carry a different label '''
    labels = np.asarray(labels)
    if labels.size != graph.m:
        raise ValidationError(f"{labels.size} labels for a lattice of {graph.m} subregions")
    count = 0
    for i, nb in enumerate(graph.neighbors):
        if len(nb) > 0 and np.all(labels[list(nb)] != labels[i]):
            count += 1
    return count
