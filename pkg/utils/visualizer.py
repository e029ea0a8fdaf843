import numpy as np

from utils.errors import ValidationError

MAXVAL = 255


def label_map(labels, rows, cols, scale=8):
    """Render lattice cluster labels as a gray-level image.

    Args:
        labels (ndarray [m]): cluster ids per subregion in row-major lattice order.
        rows, cols (int): lattice shape, rows * cols = m.
        scale (int): pixels per subregion side.

    Return:
        ndarray [rows * scale, cols * scale] of ints in 0..255, clusters spread evenly over the gray range.
    """
    labels = np.asarray(labels)
    if labels.size != rows * cols:
        raise ValidationError(f"{labels.size} labels for a {rows}x{cols} lattice")
    ids, index = np.unique(labels, return_inverse=True)
    levels = np.linspace(0, MAXVAL, num=max(len(ids), 2))[:len(ids)] if len(ids) > 1 else np.array([MAXVAL // 2])
    grid = np.rint(levels[index.ravel()]).astype(np.int64).reshape(rows, cols)
    return np.kron(grid, np.ones((scale, scale), dtype=np.int64))


def field_image(values):
    ''' min-max scale a raster to 0..255; constant rasters map to mid gray '''
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi <= lo:
        return np.full(values.shape, MAXVAL // 2, dtype=np.int64)
    return np.rint((values - lo) / (hi - lo) * MAXVAL).astype(np.int64)


def write_pgm(path, image):
    ''' plain (P2) PGM, one image row per line '''
    image = np.asarray(image, dtype=np.int64)
    if image.ndim != 2:
        raise ValidationError(f"PGM image must be 2D, got shape {image.shape}")
    with open(path, 'w') as f:
        f.write(f"P2\n{image.shape[1]} {image.shape[0]}\n{MAXVAL}\n")
        for row in image:
            f.write(' '.join(str(v) for v in row) + '\n')
