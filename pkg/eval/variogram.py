from dataclasses import dataclass
from typing import List

import numpy as np

from utils.errors import ValidationError

Z_95 = 1.96
DIRECTIONS = ((0, 1), (1, 0), (1, 1), (1, -1))


@dataclass
class ClusterVariogram:
    label: int
    members: int
    lags: np.ndarray
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @property
    def band_omitted(self):
        return self.members < 2


def semivariograms(tiles, max_lag=None):
    """Isotropic empirical semivariograms of a stack of square tiles.

    Pairs are taken along the axis-aligned and diagonal offsets s (0, 1), s (1, 0), s (1, 1), s (1, -1) and
    binned by rounded Euclidean length up to max_lag; gamma(h) = sum (z(x) - z(x + d))^2 / (2 |pairs(h)|).

    Args:
        tiles (ndarray [m, side, side])
        max_lag (int | None): defaults to side // 2.

    Return:
        lags (ndarray [H]), gamma (ndarray [m, H])
    """
    tiles = np.asarray(tiles, dtype=np.float64)
    if tiles.ndim != 3 or tiles.shape[1] != tiles.shape[2]:
        raise ValidationError(f"tiles must have shape (m, side, side), got {tiles.shape}")
    side = tiles.shape[1]
    max_lag = side // 2 if max_lag is None else int(max_lag)
    if max_lag < 1 or max_lag >= side:
        raise ValidationError(f"max_lag must lie in 1..{side - 1}, got {max_lag}")
    sums = np.zeros((tiles.shape[0], max_lag + 1))
    counts = np.zeros(max_lag + 1)
    for uy, ux in DIRECTIONS:
        for s in range(1, max_lag + 1):
            dy, dx = s * uy, s * ux
            h = int(np.rint(np.hypot(dy, dx)))
            if h > max_lag:
                break
            x0, x1 = max(0, -dx), side - max(0, dx)
            a = tiles[:, :side - dy, x0:x1]
            b = tiles[:, dy:, x0 + dx:x1 + dx]
            sums[:, h] += np.sum((a - b) ** 2, axis=(1, 2))
            counts[h] += a.shape[1] * a.shape[2]
    lags = np.arange(1, max_lag + 1)
    with np.errstate(invalid='ignore', divide='ignore'):
        gamma = sums[:, 1:] / (2.0 * counts[1:])
    return lags, gamma


def cluster_variograms(lat, labels, max_lag=None, logger=None):
    """Lag-wise mean semivariogram of each cluster's member subregions with a normal 95% band.

    Clusters with fewer than two members get a NaN band and are reported through the logger.
    """
    labels = np.asarray(labels)
    if labels.size != lat.m:
        raise ValidationError(f"{labels.size} labels for a lattice of {lat.m} subregions")
    lags, gamma = semivariograms(np.stack([sub.values for sub in lat.subregions]), max_lag)
    result: List[ClusterVariogram] = []
    for label in np.unique(labels):
        members = gamma[labels == label]
        mean = members.mean(axis=0)
        if members.shape[0] < 2:
            lo = hi = np.full_like(mean, np.nan)
            if logger is not None:
                logger.warn(f"cluster {label} has a single member; variogram band omitted")
        else:
            half = Z_95 * members.std(axis=0, ddof=1) / np.sqrt(members.shape[0])
            lo, hi = mean - half, mean + half
        result.append(ClusterVariogram(label=int(label), members=members.shape[0], lags=lags, mean=mean, lo=lo, hi=hi))
    return result
