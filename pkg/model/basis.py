from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from utils.errors import RankDeficientError, ValidationError

ORDER = 4  # cubic
DEFAULT_L = 10


def marginal_knots(l, lower, upper):
    ''' clamped knot vector with l - 4 equally spaced interior knots on [lower, upper] '''
    breaks = np.linspace(lower, upper, l - ORDER + 2)
    return np.concatenate([np.repeat(lower, ORDER - 1), breaks, np.repeat(upper, ORDER - 1)])


def marginal_bspline(l, grid, knot_range=None):
    """Cubic B-spline basis evaluated on grid.

    Args:
        l (int): number of basis functions, >= 4.
        grid (ndarray [g]): evaluation points inside knot_range.
        knot_range (tuple | None): (lower, upper); defaults to (min(grid), max(grid)).

    Return:
        ndarray [g, l], rows non-negative and summing to 1.
    """
    if l < ORDER:
        raise ValidationError(f"need l >= {ORDER} cubic basis functions, got {l}")
    grid = np.asarray(grid, dtype=np.float64)
    lower, upper = knot_range if knot_range is not None else (grid.min(), grid.max())
    if not upper > lower:
        raise ValidationError(f"empty knot range [{lower}, {upper}]")
    if np.any(grid < lower) or np.any(grid > upper):
        raise ValidationError(f"grid points outside knot span [{lower}, {upper}]")
    t = marginal_knots(l, lower, upper)
    interior = grid < upper
    mat = np.zeros((grid.size, l))
    if np.any(interior):
        mat[interior] = BSpline.design_matrix(grid[interior], t, ORDER - 1).toarray()
    # clamped splines interpolate the last coefficient at the right end
    mat[~interior, l - 1] = 1.0
    return mat


def tensor_design(marginal):
    ''' B = B* kron B*; row (j1, j2) -> j1 * n1 + j2, column (a, b) -> a * l + b '''
    marginal = np.atleast_2d(marginal)
    return np.kron(marginal, marginal)


def second_difference_penalty(l):
    """Second-order difference penalty.

    Return:
        D (ndarray [l-2, l]): rows (1, -2, 1) on shifting diagonals.
        r (ndarray [l, l]): D^T D.
        R (ndarray [l^2, l^2]): I kron r + r kron I.
    """
    if l < 3:
        raise ValidationError(f"second differences need l >= 3, got {l}")
    D = np.diff(np.eye(l), n=2, axis=0)
    r = D.T @ D
    eye = np.eye(l)
    R = np.kron(eye, r) + np.kron(r, eye)
    return D, r, R


@dataclass(frozen=True)
class BasisSystem:
    """Tensor cubic B-spline family on the Fourier frequency grid of a side x side subregion."""
    l: int
    side: int
    knots: np.ndarray = field(repr=False)
    marginal: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    D: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)
    R: np.ndarray = field(repr=False)
    order: int = ORDER

    @property
    def L(self):
        return self.l * self.l

    @property
    def n(self):
        return self.B.shape[0]

    @classmethod
    def build(cls, side, l=DEFAULT_L):
        grid = np.arange(side) / side
        knot_range = (0.0, 1.0 - 1.0 / side)
        marginal = marginal_bspline(l, grid, knot_range)
        B = tensor_design(marginal)
        D, r, R = second_difference_penalty(l)
        system = cls(l=l, side=side, knots=marginal_knots(l, *knot_range), marginal=marginal, B=B, D=D, r=r, R=R)
        system.check_rank()
        return system

    def check_rank(self):
        rank = np.linalg.matrix_rank(self.B)
        if rank < self.L:
            raise RankDeficientError(f"design matrix has rank {rank} < L = {self.L} "
                                     f"({self.L - rank} deficient columns); lower l or enlarge the subregions",
                                     deficient=self.L - rank)

    def coefficients(self, Y):
        ''' least-squares coefficients (B^T B)^{-1} B^T Y for Y with n rows '''
        Q, Rq = np.linalg.qr(self.B)
        return np.linalg.solve(Rq, Q.T @ Y)

    def project(self, Y):
        ''' orthogonal projection of the columns of Y onto span(B) '''
        Q, _ = np.linalg.qr(self.B)
        return Q @ (Q.T @ Y)

    def penalty_root(self, tol=1e-10):
        ''' R = S S^T with S [L, p] spanning the penalised (non-null) directions of R '''
        evals, evecs = np.linalg.eigh(self.R)
        keep = evals > tol * evals[-1]
        return evecs[:, keep] * np.sqrt(evals[keep])
