from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from einops import rearrange

from utils.errors import ValidationError

MIN_SIDE = 4


@dataclass(frozen=True)
class GridField:
    """One real-valued raster on a regular lattice.

    Args:
        values (ndarray [n1, n2]): the field, row-major.
        origin (tuple of size 2): (row, col) offset inside the parent field.
        cell_size (float | None): physical spacing, informational only.
    """
    values: np.ndarray
    origin: Tuple[int, int] = (0, 0)
    cell_size: Optional[float] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError(f"field must be 2D, got shape {values.shape}")
        if values.shape[0] < 2 or values.shape[1] < 2:
            raise ValidationError(f"field must be at least 2x2, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("field contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'origin', (int(self.origin[0]), int(self.origin[1])))

    @property
    def shape(self):
        return self.values.shape

    @property
    def n(self):
        return self.values.size

    @property
    def is_square(self):
        return self.values.shape[0] == self.values.shape[1]


@dataclass(frozen=True)
class SubregionLattice:
    """An r x c lattice of square subregions, indexed row-major from the top-left."""
    rows: int
    cols: int
    side: int
    subregions: Tuple[GridField, ...]
    cell_size: Optional[float] = None

    def __post_init__(self):
        if len(self.subregions) != self.rows * self.cols:
            raise ValidationError(f"expected {self.rows * self.cols} subregions, got {len(self.subregions)}")
        for sub in self.subregions:
            if sub.shape != (self.side, self.side):
                raise ValidationError(f"subregion at {sub.origin} has shape {sub.shape}, expected side {self.side}")

    @property
    def m(self):
        return self.rows * self.cols

    @property
    def n(self):
        return self.side * self.side

    def position(self, i):
        ''' (row, col) of subregion i on the lattice '''
        return i // self.cols, i % self.cols

    def stack(self):
        ''' (m, side, side) array of subregion values in lattice order '''
        return np.stack([sub.values for sub in self.subregions], axis=0)


@dataclass(frozen=True)
class NeighborGraph:
    """Rook adjacency (up/down/left/right) on an r x c lattice."""
    rows: int
    cols: int
    neighbors: Tuple[Tuple[int, ...], ...]
    sizes: np.ndarray = field(repr=False)

    @property
    def m(self):
        return self.rows * self.cols

    def averaging_matrix(self):
        ''' M with M[i, j] = 1/|N_i| for j in N_i; rows of isolated cells are zero '''
        M = np.zeros((self.m, self.m))
        for i, nb in enumerate(self.neighbors):
            if len(nb) > 0:
                M[i, list(nb)] = 1.0 / len(nb)
        return M

    def difference_matrix(self):
        ''' I - M, so that row i of (I - M) A is D_i; cells without neighbours get a zero row '''
        D = np.eye(self.m) - self.averaging_matrix()
        D[self.sizes == 0] = 0.0
        return D

    def fusion_matrix(self):
        ''' Q = (I - M)^T (I - M); PEN_2(A) = tr(A^T Q A) '''
        D = self.difference_matrix()
        return D.T @ D


def partition(field, side):
    """Split a field into an r x c lattice of side x side subregions.

    Raises:
        ValidationError: side < 4 or a field dimension is not a multiple of side.
    """
    if side < MIN_SIDE:
        raise ValidationError(f"subregion side {side} too small, need >= {MIN_SIDE}")
    n1, n2 = field.shape
    if n1 % side != 0:
        raise ValidationError(f"rows: field has {n1} rows, not divisible by side {side}")
    if n2 % side != 0:
        raise ValidationError(f"cols: field has {n2} columns, not divisible by side {side}")
    rows, cols = n1 // side, n2 // side
    tiles = rearrange(field.values, '(r h) (c w) -> (r c) h w', h=side, w=side)
    r0, c0 = field.origin
    subregions = tuple(GridField(tiles[i], origin=(r0 + (i // cols) * side, c0 + (i % cols) * side),
                                 cell_size=field.cell_size)
                       for i in range(rows * cols))
    return SubregionLattice(rows=rows, cols=cols, side=side, subregions=subregions, cell_size=field.cell_size)


def reassemble(lat):
    ''' inverse of partition '''
    values = rearrange(lat.stack(), '(r c) h w -> (r h) (c w)', r=lat.rows, c=lat.cols)
    return GridField(values, cell_size=lat.cell_size)


def lattice_from_tiles(tiles, rows, cols, cell_size=None):
    ''' build a lattice from an (m, side, side) stack in row-major lattice order '''
    tiles = np.asarray(tiles, dtype=np.float64)
    if tiles.ndim != 3 or tiles.shape[1] != tiles.shape[2]:
        raise ValidationError(f"tiles must have shape (m, side, side), got {tiles.shape}")
    side = tiles.shape[1]
    subregions = tuple(GridField(tiles[i], origin=((i // cols) * side, (i % cols) * side), cell_size=cell_size)
                       for i in range(tiles.shape[0]))
    return SubregionLattice(rows=rows, cols=cols, side=side, subregions=subregions, cell_size=cell_size)


def build_neighbor_graph(rows, cols):
    if rows < 1 or cols < 1:
        raise ValidationError(f"lattice shape must be positive, got {rows}x{cols}")
    neighbors = []
    for i in range(rows * cols):
        r, c = i // cols, i % cols
        nb = []
        # up, left, right, down: ascending index order
        if r > 0:
            nb.append(i - cols)
        if c > 0:
            nb.append(i - 1)
        if c < cols - 1:
            nb.append(i + 1)
        if r < rows - 1:
            nb.append(i + cols)
        neighbors.append(tuple(nb))
    sizes = np.array([len(nb) for nb in neighbors], dtype=np.int64)
    return NeighborGraph(rows=rows, cols=cols, neighbors=tuple(neighbors), sizes=sizes)


def demean(field):
    return GridField(field.values - field.values.mean(), origin=field.origin, cell_size=field.cell_size)
