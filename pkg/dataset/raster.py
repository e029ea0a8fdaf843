import os
import numpy as np

from dataset.lattice import GridField
from utils.errors import ValidationError

FORMATS = ('csv', 'bin')


def infer_format(path):
    ext = os.path.splitext(path)[1].lower()
    if ext == '.csv':
        return 'csv'
    elif ext in ('.bin', '.raw'):
        return 'bin'
    raise ValidationError(f"cannot infer raster format from {path!r}, expected .csv or .bin")


def read_field(path, format=None):
    """Read a GridField from a CSV matrix or a flat binary raster.

    Binary layout: ASCII header "rows cols\\n" then rows*cols float64 little-endian, row-major.
    """
    format = format or infer_format(path)
    if format == 'csv':
        values = _read_csv(path)
    elif format == 'bin':
        values = _read_bin(path)
    else:
        raise ValidationError(f"unknown raster format {format!r}, choose from {FORMATS}")
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"{path}: non-finite values in raster")
    return GridField(values)


def write_field(field, path, format=None):
    format = format or infer_format(path)
    values = np.ascontiguousarray(field.values, dtype='<f8')
    if format == 'csv':
        np.savetxt(path, values, delimiter=',', fmt='%.17g')
    elif format == 'bin':
        with open(path, 'wb') as f:
            f.write(f"{values.shape[0]} {values.shape[1]}\n".encode('ascii'))
            f.write(values.tobytes(order='C'))
    else:
        raise ValidationError(f"unknown raster format {format!r}, choose from {FORMATS}")


def _read_csv(path):
    rows = []
    with open(path, 'r') as f:
        for i, line in enumerate(f.read().splitlines()):
            if not line.strip():
                continue
            try:
                rows.append([float(v) for v in line.split(',')])
            except ValueError:
                raise ValidationError(f"{path}: row {i}: unparsable value in {line!r}")
            if len(rows[-1]) != len(rows[0]):
                raise ValidationError(f"{path}: row {i} has {len(rows[-1])} values, expected {len(rows[0])}")
    if not rows:
        raise ValidationError(f"{path}: empty CSV raster")
    return np.array(rows, dtype=np.float64)


def _read_bin(path):
    with open(path, 'rb') as f:
        header = f.readline()
        payload = f.read()
    try:
        rows, cols = (int(v) for v in header.decode('ascii').split())
    except (UnicodeDecodeError, ValueError):
        raise ValidationError(f"{path}: malformed header {header[:40]!r}, expected 'rows cols'")
    if rows < 1 or cols < 1:
        raise ValidationError(f"{path}: invalid raster shape {rows}x{cols}")
    expected = rows * cols * 8
    if len(payload) < expected:
        raise ValidationError(f"{path}: truncated payload, header says {rows}x{cols} "
                              f"({rows * cols} values) but found {len(payload) // 8}")
    if len(payload) > expected:
        raise ValidationError(f"{path}: {len(payload) - expected} trailing bytes after {rows}x{cols} payload")
    return np.frombuffer(payload, dtype='<f8').reshape(rows, cols).astype(np.float64)
