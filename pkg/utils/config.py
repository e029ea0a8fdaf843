import os
from dataclasses import dataclass, fields
from typing import Optional

from utils.errors import ValidationError
from utils.file import read_kv, write_kv

FEATURES = ('astar', 'a', 'sdf', 'spb', 'spk', 'sep')
TRUE_WORDS = ('on', 'true', 'yes', '1')
FALSE_WORDS = ('off', 'false', 'no', '0')


def _to_bool(text):
    word = str(text).strip().lower()
    if word in TRUE_WORDS:
        return True
    elif word in FALSE_WORDS:
        return False
    raise ValueError(f"expected on/off, got {text!r}")


@dataclass
class RunConfig:
    input: Optional[str] = None       # raster file, or a simulate output directory
    scenario: str = 'p1'
    m: Optional[int] = None
    rows: Optional[int] = None
    cols: Optional[int] = None
    side: int = 40
    l: int = 10
    k: Optional[int] = None
    k_select: str = 'elbow'
    k_max: Optional[int] = None
    spatial: bool = True
    features: str = 'astar'
    seed: int = 0
    max_iter: int = 200
    tol: float = 1e-6
    lambda1: float = 1.0
    lambda2: float = 1.0
    replicates: int = 1
    threads: int = 0
    device: str = 'cpu'
    out: str = './out'

    def feature_list(self):
        ''' "all" or a comma list of feature kinds '''
        if self.features.strip() == 'all':
            return list(FEATURES)
        return [f.strip() for f in self.features.split(',') if f.strip()]

    def shape(self):
        if self.rows is not None and self.cols is not None:
            return self.rows, self.cols
        return None

    def validate(self):
        from dataset.simulate import SCENARIOS

        if self.input is not None and not os.path.exists(self.input):
            raise ValidationError(f"input path {self.input!r} does not exist")
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if (self.rows is None) != (self.cols is None):
            raise ValidationError("rows and cols must be given together")
        for name in ('m', 'rows', 'cols', 'k', 'k_max'):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValidationError(f"{name} must be >= 1, got {value}")
        if self.side < 4:
            raise ValidationError(f"side must be >= 4, got {self.side}")
        if self.l < 4:
            raise ValidationError(f"l must be >= 4, got {self.l}")
        if self.k_select not in ('elbow', 'ch'):
            raise ValidationError(f"k_select must be elbow or ch, got {self.k_select!r}")
        unknown = [f for f in self.feature_list() if f not in FEATURES]
        if unknown or not self.feature_list():
            raise ValidationError(f"features must be 'all' or a comma list of {FEATURES}, got {self.features!r}")
        if self.max_iter < 1 or self.replicates < 1 or self.threads < 0:
            raise ValidationError("max_iter and replicates must be >= 1, threads >= 0")
        if not (self.tol > 0 and self.lambda1 > 0 and self.lambda2 > 0):
            raise ValidationError("tol, lambda1 and lambda2 must be positive")
        return self

    def to_record(self):
        record = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            record[f.name] = ('on' if value else 'off') if isinstance(value, bool) else value
        return record

    def save(self, path):
        write_kv(path, self.to_record())


def _parser(f):
    kind = str(f.type)  # "<class 'int'>", "typing.Optional[int]", ...
    if 'bool' in kind:
        return _to_bool
    elif 'int' in kind:
        return int
    elif 'float' in kind:
        return float
    return str


def parse_values(record, source):
    ''' typed overrides from a dict of strings; unknown keys are rejected '''
    known = {f.name: f for f in fields(RunConfig)}
    values = {}
    for key, text in record.items():
        if key not in known:
            raise ValidationError(f"{source}: unknown config key {key!r}; known keys: {', '.join(known)}")
        try:
            values[key] = _parser(known[key])(text)
        except ValueError as e:
            raise ValidationError(f"{source}: bad value for {key}: {e}")
    return values


def load_config(path=None, overrides=None):
    """Resolve a RunConfig from an optional key = value file and flag overrides.

    Overrides whose value is None are ignored, so argparse flags only win when given.
    """
    values = {}
    if path is not None:
        if not os.path.isfile(path):
            raise ValidationError(f"config file {path!r} does not exist")
        values.update(parse_values(read_kv(path), path))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in {f.name for f in fields(RunConfig)}:
            raise ValidationError(f"unknown config key {key!r}")
        values[key] = value
    return RunConfig(**values).validate()
