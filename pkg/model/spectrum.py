from dataclasses import dataclass, field

import numpy as np
from scipy.fft import fft2

from dataset.lattice import demean
from utils.errors import DegenerateInputError, ValidationError

FLOOR_REL = 1e-10


@dataclass(frozen=True)
class FrequencyGrid:
    ''' omega_j = (j1 / side, j2 / side), j1 outer, j2 inner '''
    side: int
    freqs: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, side):
        u = np.arange(side) / side
        uu, vv = np.meshgrid(u, u, indexing='ij')
        return cls(side=side, freqs=np.stack([uu.ravel(), vv.ravel()], axis=1))

    @property
    def n(self):
        return self.side * self.side


@dataclass(frozen=True)
class PeriodogramSet:
    ''' I [m, n]: row i is the clamped periodogram of subregion i on the shared grid '''
    I: np.ndarray = field(repr=False)
    floor: float
    side: int

    @property
    def m(self):
        return self.I.shape[0]

    @property
    def n(self):
        return self.I.shape[1]

    def log(self):
        return np.log(self.I)

    def subset(self, index):
        return PeriodogramSet(I=self.I[index], floor=self.floor, side=self.side)


def raw_periodograms(tiles):
    ''' |sum_s z(s) exp(-2 pi i omega^T s)|^2 / n for a stack [..., side, side], flattened row-major '''
    tiles = np.asarray(tiles, dtype=np.float64)
    side = tiles.shape[-1]
    n = side * side
    F = fft2(tiles, axes=(-2, -1))
    I = (F.real ** 2 + F.imag ** 2) / n
    return I.reshape(tiles.shape[:-2] + (n,))


def periodogram_2d(sub):
    """Periodogram ordinates of one square subregion on its Fourier grid.

    Args:
        sub (GridField): square, demeaned subregion.

    Return:
        ndarray [side^2] in FrequencyGrid order.
    """
    if not sub.is_square:
        raise ValidationError(f"periodogram needs a square subregion, got {sub.shape}")
    return raw_periodograms(sub.values)


def periodogram_set(lat):
    tiles = np.stack([demean(sub).values for sub in lat.subregions])
    raw = raw_periodograms(tiles)
    peak = raw.max()
    if not peak > 0:
        raise DegenerateInputError("all periodogram ordinates are zero; log spectra are undefined")
    floor = FLOOR_REL * peak
    return PeriodogramSet(I=np.maximum(raw, floor), floor=floor, side=lat.side)


def smoothed_log_periodogram(P, basis):
    ''' U_sp [n, m] = B (B^T B)^{-1} B^T log(I^T) '''
    if basis.n != P.n:
        raise ValidationError(f"basis has {basis.n} frequencies, periodograms have {P.n}")
    basis.check_rank()
    return basis.project(P.log().T)
