import os
import re
import numpy as np

from utils.errors import ValidationError

KV_LINE = re.compile(r'^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)\s*$')


def get_fit_dir(path):
    ''' resolve a fit directory: either <path> itself or <path>/fit, whichever holds meta.txt '''
    if os.path.isfile(os.path.join(path, 'meta.txt')):
        return path
    elif os.path.isfile(os.path.join(path, 'fit', 'meta.txt')):
        return os.path.join(path, 'fit')
    else:
        return None


def read_kv(path):
    ''' parse a flat "key = value" text file into an ordered dict of strings '''
    record = {}
    with open(path, 'r') as f:
        for i, line in enumerate(f.read().splitlines()):
            line = line.split('#', 1)[0]
            if not line.strip():
                continue
            find = KV_LINE.match(line)
            if find is None:
                raise ValidationError(f"{path}:{i + 1}: expected 'key = value', got {line!r}")
            record[find.group(1)] = find.group(2)
    return record


def write_kv(path, record):
    with open(path, 'w') as f:
        for k, v in record.items():
            f.write(f"{k} = {v}\n")


def write_matrix(path, mat, header=None):
    ''' write a 2D array as CSV with round-trip precision '''
    mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    np.savetxt(path, mat, delimiter=',', fmt='%.17g', header=header or '', comments='')


def read_matrix(path, skip_header=False):
    mat = np.loadtxt(path, delimiter=',', skiprows=1 if skip_header else 0, ndmin=2)
    return mat


def write_rows(path, header, rows):
    ''' write a list of tuples as CSV with a header line '''
    with open(path, 'w') as f:
        f.write(','.join(header) + '\n')
        for row in rows:
            f.write(','.join(_fmt(v) for v in row) + '\n')


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return 'nan' if np.isnan(v) else repr(float(v))
    return str(v)
