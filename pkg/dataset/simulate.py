from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.special import gamma, kv

from dataset.lattice import GridField, lattice_from_tiles
from utils.errors import NumericError, ValidationError

SCENARIOS = ('p1', 'p2', 'gradient')
EIG_TOL = 1e-10


@dataclass(frozen=True)
class MaternParams:
    rho: float
    nu: float
    sigma2: float = 1.0

    def __post_init__(self):
        if not (self.rho > 0 and self.nu > 0 and self.sigma2 > 0):
            raise ValidationError(f"Matern parameters must be positive, got {self}")


@dataclass(frozen=True)
class Scenario:
    name: str
    rows: int
    cols: int
    side: int
    params: Tuple[MaternParams, ...]
    seed: int
    true_labels: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.params) != self.rows * self.cols:
            raise ValidationError(f"scenario needs {self.rows * self.cols} parameter sets, got {len(self.params)}")

    @property
    def m(self):
        return self.rows * self.cols

    def describe(self):
        ''' key = value record of the scenario '''
        distinct = sorted({(p.rho, p.nu, p.sigma2) for p in self.params})
        record = {'name': self.name, 'rows': self.rows, 'cols': self.cols, 'side': self.side,
                  'm': self.m, 'seed': self.seed, 'has_truth': int(self.true_labels is not None)}
        for j, (rho, nu, sigma2) in enumerate(distinct):
            record[f'param_{j}'] = f"rho={rho!r} nu={nu!r} sigma2={sigma2!r}"
        return record


def matern_cov(d, p):
    """Matern covariance C(d; nu, rho) scaled by sigma2; C(0) = sigma2.

    Uses scipy.special.kv for K_nu, valid for any real nu > 0.
    """
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValidationError("distances must be non-negative")
    x = np.sqrt(2.0 * p.nu) * d / p.rho
    out = np.full(x.shape, p.sigma2, dtype=np.float64)
    pos = x > 0
    xp = x[pos]
    with np.errstate(over='ignore', invalid='ignore'):
        val = p.sigma2 * (2.0 ** (1.0 - p.nu) / gamma(p.nu)) * xp ** p.nu * kv(p.nu, xp)
    # K_nu underflows to 0 far out; x**nu * 0 stays 0
    out[pos] = np.where(np.isfinite(val), val, 0.0)
    return out if out.ndim else float(out)


@lru_cache(maxsize=64)
def _sqrt_cov(side, p):
    ''' symmetric square root of the (side^2 x side^2) Matern covariance on unit-spaced integer coordinates '''
    C = covariance_matrix(side, p)
    evals, evecs = np.linalg.eigh(C)
    tol = EIG_TOL * max(evals[-1], 1.0)
    if evals[0] < -tol:
        raise NumericError(f"Matern covariance not PSD for {p}: min eigenvalue {evals[0]:.3e}")
    root = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T
    root.setflags(write=False)
    return root


def covariance_matrix(side, p):
    rr, cc = np.meshgrid(np.arange(side), np.arange(side), indexing='ij')
    coords = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.float64)
    return matern_cov(squareform(pdist(coords)), p)


def sample_grf(side, p, rng):
    """Draw one zero-mean Gaussian random field with Matern covariance.

    Exact: z = C^{1/2} e with C^{1/2} the eigen square root (eigenvalues clipped at 0).
    """
    root = _sqrt_cov(int(side), p)
    e = rng.standard_normal(side * side)
    return GridField((root @ e).reshape(side, side))


def subregion_rngs(seed, m):
    ''' independent generator per subregion; stream i depends only on (seed, i) '''
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(m)]


def build_scenario(name, m=None, shape=None, side=40, seed=0):
    """Build one of the simulation scenarios and sample its lattice.

    p1:       cluster i in {1,2,3}: rho = nu = 0.4 i
    p2:       cluster i in {1,2,3}: rho = 0.4 i, nu = 0.4 (4 - i)
    gradient: rho = nu = 0.5 + 0.05 col on a 20 x 50 lattice (col = 1..cols), no truth

    Returns:
        (Scenario, SubregionLattice)
    """
    if name in ('p1', 'p2'):
        if shape is None:
            if m is None:
                raise ValidationError(f"scenario {name} needs m or a lattice shape")
            if m % 3 != 0:
                raise ValidationError(f"scenario {name} needs m divisible by 3, got m={m}")
            shape = (3, m // 3)
        rows, cols = shape
        total = rows * cols
        if total % 3 != 0:
            raise ValidationError(f"scenario {name} needs m divisible by 3, got m={total}")
        labels = np.repeat(np.arange(1, 4), total // 3)
        if name == 'p1':
            table = {i: MaternParams(rho=0.4 * i, nu=0.4 * i) for i in (1, 2, 3)}
        else:
            table = {i: MaternParams(rho=0.4 * i, nu=0.4 * (4 - i)) for i in (1, 2, 3)}
        params = tuple(table[int(c)] for c in labels)
    elif name == 'gradient':
        rows, cols = shape if shape is not None else (20, 50)
        params = tuple(MaternParams(rho=0.5 + 0.05 * (i % cols + 1), nu=0.5 + 0.05 * (i % cols + 1))
                       for i in range(rows * cols))
        labels = None
    else:
        raise ValidationError(f"unknown scenario {name!r}, choose from {SCENARIOS}")

    scenario = Scenario(name=name, rows=rows, cols=cols, side=side, params=params, seed=seed, true_labels=labels)
    return scenario, simulate_lattice(scenario)


def simulate_lattice(scenario):
    rngs = subregion_rngs(scenario.seed, scenario.m)
    tiles = np.stack([sample_grf(scenario.side, p, rng).values for p, rng in zip(scenario.params, rngs)])
    return lattice_from_tiles(tiles, scenario.rows, scenario.cols)
