"""Dataset representation, ingestion and the caliper specification."""
import math
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml

from .errors import (
    ConstantNonBinaryColumn,
    DimensionMismatch,
    DuplicateId,
    InvalidCaliperSpec,
    MissingColumn,
    NoControlUnits,
    NonBinaryTreatment,
    NonFiniteValue,
    NoTreatedUnits,
)


class Norm(str, Enum):
    L2 = 'l2'
    LINF = 'linf'


class Policy(str, Enum):
    FIXED = 'fixed'
    ADAPTIVE = 'adaptive'
    K_BOUNDED = 'kbounded'


def parse_norm(value) -> Norm:
    if isinstance(value, Norm):
        return value
    try:
        return Norm(str(value).strip().lower())
    except ValueError as e:
        raise InvalidCaliperSpec(f"Unknown norm '{value}' (expected l2 or linf)") from e


def parse_policy(value) -> Policy:
    if isinstance(value, Policy):
        return value
    key = str(value).strip().lower().replace('_', '').replace('-', '')
    try:
        return Policy(key)
    except ValueError as e:
        raise InvalidCaliperSpec(f"Unknown policy '{value}' (expected fixed, adaptive or kbounded)") from e


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Dataset:
    """Units with covariates X (n x p), binary treatment Z and outcome Y.

    Row order defines the unit index; everything reported downstream refers to
    units by id.
    """
    ids: Tuple[str, ...]
    X: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    column_names: Tuple[str, ...]
    _index: Dict[str, int] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        X = np.asarray(self.X, dtype=float)
        Z = np.asarray(self.Z)
        Y = np.asarray(self.Y, dtype=float)
        columns = tuple(str(c) for c in self.column_names)

        if X.ndim != 2:
            raise DimensionMismatch(f"X must be a matrix, got shape {X.shape}")
        n, p = X.shape
        if n < 2 or p < 1:
            raise DimensionMismatch(f"Need n >= 2 units and p >= 1 covariates, got n={n}, p={p}")
        if len(ids) != n or Z.shape != (n,) or Y.shape != (n,) or len(columns) != p:
            raise DimensionMismatch("ids, X, Z, Y and column_names disagree in size")

        if not np.all(np.isin(Z, (0, 1))):
            bad = int(np.flatnonzero(~np.isin(Z, (0, 1)))[0])
            raise NonBinaryTreatment(f"Treatment of unit {ids[bad]} is {Z[bad]!r}, expected 0 or 1")
        if not np.all(np.isfinite(Y)):
            bad = int(np.flatnonzero(~np.isfinite(Y))[0])
            raise NonFiniteValue(f"Non-finite outcome for unit {ids[bad]}")
        if not np.all(np.isfinite(X)):
            row, col = np.argwhere(~np.isfinite(X))[0]
            raise NonFiniteValue(f"Non-finite value in column '{columns[col]}' for unit {ids[row]}")

        index = {}
        for i, unit_id in enumerate(ids):
            if unit_id in index:
                raise DuplicateId(f"Duplicate unit id '{unit_id}'")
            index[unit_id] = i

        Z = Z.astype(np.int8)
        if not np.any(Z == 1):
            raise NoTreatedUnits("Dataset has no treated units (Z=1)")
        if not np.any(Z == 0):
            raise NoControlUnits("Dataset has no control units (Z=0)")

        object.__setattr__(self, 'ids', ids)
        object.__setattr__(self, 'X', _readonly(X))
        object.__setattr__(self, 'Z', _readonly(Z))
        object.__setattr__(self, 'Y', _readonly(Y))
        object.__setattr__(self, 'column_names', columns)
        object.__setattr__(self, '_index', index)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def treated_idx(self) -> np.ndarray:
        return np.flatnonzero(self.Z == 1)

    @property
    def control_idx(self) -> np.ndarray:
        return np.flatnonzero(self.Z == 0)

    @property
    def n_treated(self) -> int:
        return int(np.sum(self.Z == 1))

    @property
    def n_control(self) -> int:
        return int(np.sum(self.Z == 0))

    @property
    def treated_ids(self) -> Tuple[str, ...]:
        return tuple(self.ids[i] for i in self.treated_idx)

    @property
    def control_ids(self) -> Tuple[str, ...]:
        return tuple(self.ids[i] for i in self.control_idx)

    def index_of(self, unit_id: str) -> int:
        try:
            return self._index[unit_id]
        except KeyError:
            raise KeyError(f"Unknown unit id '{unit_id}'") from None


@dataclass(frozen=True)
class Schema:
    """Column roles of an input CSV."""
    treatment: str
    outcome: str
    covariates: Optional[Sequence[str]] = None  # None means all remaining columns
    id_column: Optional[str] = None


@dataclass(frozen=True)
class ScalingMatrix:
    """Diagonal V = diag{1/pi} induced by covariate-wise calipers.

    Gaps are scaled by dividing by pi, so |x_k - y_k| <= pi_k holds exactly
    when the scaled gap is <= 1.
    """
    pi: Tuple[float, ...]

    def __post_init__(self):
        pi = tuple(float(v) for v in self.pi)
        if not pi or any(not (v > 0 and math.isfinite(v)) for v in pi):
            raise InvalidCaliperSpec(f"Covariate calipers must be finite and strictly positive, got {pi}")
        object.__setattr__(self, 'pi', pi)

    @property
    def v_diag(self) -> np.ndarray:
        return 1.0 / np.asarray(self.pi)

    @property
    def p(self) -> int:
        return len(self.pi)

    def scale(self, gaps: np.ndarray) -> np.ndarray:
        """Apply V to covariate gaps along the last axis."""
        gaps = np.asarray(gaps, dtype=float)
        if gaps.shape[-1] != self.p:
            raise DimensionMismatch(f"Expected {self.p} covariates, got {gaps.shape[-1]}")
        return gaps / np.asarray(self.pi)


@dataclass(frozen=True)
class CaliperSpec:
    """Covariate-wise calipers pi, global caliper c and the adaptivity policy."""
    columns: Tuple[str, ...]
    pi: Tuple[float, ...]
    c: float = 1.0
    alpha: float = 1.0
    policy: Policy = Policy.FIXED
    norm: Norm = Norm.LINF
    k_min: int = 1
    k_max: int = 5

    def __post_init__(self):
        columns = tuple(str(c) for c in self.columns)
        pi = tuple(float(v) for v in self.pi)
        if len(columns) != len(pi):
            raise InvalidCaliperSpec(f"{len(pi)} calipers given for {len(columns)} columns")
        for name, value in zip(columns, pi):
            if not (value > 0 and math.isfinite(value)):
                raise InvalidCaliperSpec(f"Caliper for '{name}' must be positive, got {value}")
        if not (self.c > 0 and math.isfinite(self.c)):
            raise InvalidCaliperSpec(f"Global caliper c must be positive, got {self.c}")
        if not (self.alpha >= 1 and math.isfinite(self.alpha)):
            raise InvalidCaliperSpec(f"Inflation factor alpha must be >= 1, got {self.alpha}")
        if int(self.k_min) < 1 or int(self.k_max) < int(self.k_min):
            raise InvalidCaliperSpec(f"Need 1 <= k_min <= k_max, got k_min={self.k_min}, k_max={self.k_max}")

        object.__setattr__(self, 'columns', columns)
        object.__setattr__(self, 'pi', pi)
        object.__setattr__(self, 'c', float(self.c))
        object.__setattr__(self, 'alpha', float(self.alpha))
        object.__setattr__(self, 'policy', parse_policy(self.policy))
        object.__setattr__(self, 'norm', parse_norm(self.norm))
        object.__setattr__(self, 'k_min', int(self.k_min))
        object.__setattr__(self, 'k_max', int(self.k_max))

    @property
    def p(self) -> int:
        return len(self.pi)

    def scaling(self) -> ScalingMatrix:
        return ScalingMatrix(self.pi)

    def with_overrides(self, **changes) -> 'CaliperSpec':
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, object]:
        data: Dict[str, object] = {
            'c': self.c,
            'alpha': self.alpha,
            'policy': self.policy.value,
            'norm': self.norm.value,
            'k_min': self.k_min,
            'k_max': self.k_max,
        }
        for name, value in zip(self.columns, self.pi):
            data[f'pi.{name}'] = value
        return data


def _parse_cell(raw: str, row: int, column: str) -> float:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise NonFiniteValue(f"Row {row}, column '{column}': cannot read {raw!r} as a number") from None
    if not math.isfinite(value):
        raise NonFiniteValue(f"Row {row}, column '{column}': non-finite value {raw!r}")
    return value


def load_dataset(path: str, schema: Schema) -> Dataset:
    """Read and validate a CSV dataset; row order is preserved."""
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    frame.columns = [str(c).strip() for c in frame.columns]

    roles = [schema.treatment, schema.outcome] + ([schema.id_column] if schema.id_column else [])
    for name in roles:
        if name not in frame.columns:
            raise MissingColumn(f"Column '{name}' not found in {path}")
    if schema.covariates is None:
        covariates = [c for c in frame.columns if c not in roles]
    else:
        covariates = list(schema.covariates)
        for name in covariates:
            if name not in frame.columns:
                raise MissingColumn(f"Covariate column '{name}' not found in {path}")
    if not covariates:
        raise MissingColumn(f"No covariate columns in {path}")

    n = len(frame)
    Z = np.empty(n, dtype=np.int8)
    for i, raw in enumerate(frame[schema.treatment], start=1):
        value = _parse_cell(raw, i, schema.treatment)
        if value not in (0.0, 1.0):
            raise NonBinaryTreatment(f"Row {i}, column '{schema.treatment}': treatment {raw!r} is not 0 or 1")
        Z[i - 1] = int(value)
    Y = np.array([_parse_cell(raw, i, schema.outcome) for i, raw in enumerate(frame[schema.outcome], start=1)])
    X = np.empty((n, len(covariates)))
    for k, name in enumerate(covariates):
        X[:, k] = [_parse_cell(raw, i, name) for i, raw in enumerate(frame[name], start=1)]

    if schema.id_column:
        ids = [str(v).strip() for v in frame[schema.id_column]]
    else:
        ids = [str(i) for i in range(1, n + 1)]

    ds = Dataset(ids=tuple(ids), X=X, Z=Z, Y=Y, column_names=tuple(covariates))
    logging.info(f"Loaded {path}: n={ds.n}, p={ds.p}, n_T={ds.n_treated}, n_C={ds.n_control}")
    return ds


def save_dataset(ds: Dataset, path: str, treatment: str = 'treatment', outcome: str = 'outcome',
                 id_column: str = 'id') -> str:
    """Write a dataset so that load_dataset reproduces it bit-exactly."""
    data = {
        id_column: list(ds.ids),
        treatment: [str(int(z)) for z in ds.Z],
        outcome: [repr(float(y)) for y in ds.Y],
    }
    for k, name in enumerate(ds.column_names):
        data[name] = [repr(float(x)) for x in ds.X[:, k]]
    pd.DataFrame(data).to_csv(path, index=False)
    return path


def is_binary_column(values: np.ndarray) -> bool:
    return bool(np.all(np.isin(values, (0.0, 1.0))))


def default_caliper(ds: Dataset, bins: int = 5, binary_pi: float = 1 / 1000) -> CaliperSpec:
    """Calipers from coarsening every continuous covariate into equal-width bins.

    Binary covariates get the small caliper binary_pi so that they are matched
    exactly.
    """
    if bins < 1:
        raise InvalidCaliperSpec(f"bins must be a positive integer, got {bins}")
    pi: List[float] = []
    for k, name in enumerate(ds.column_names):
        column = ds.X[:, k]
        if is_binary_column(column):
            pi.append(float(binary_pi))
            continue
        spread = float(column.max() - column.min())
        if spread <= 0:
            raise ConstantNonBinaryColumn(f"Covariate '{name}' is constant and not binary; it cannot receive a caliper")
        pi.append(spread / bins)
    return CaliperSpec(columns=ds.column_names, pi=tuple(pi), c=1.0, alpha=1.0,
                       policy=Policy.FIXED, norm=Norm.LINF)


def load_caliper_spec(path: str, columns: Sequence[str]) -> CaliperSpec:
    """Read the flat key-value caliper file (pi.<column>, c, alpha, policy, norm, k_min, k_max)."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise InvalidCaliperSpec(f"Error loading caliper config {path}: {e}") from e
    if not isinstance(data, dict):
        raise InvalidCaliperSpec(f"Caliper config {path} must be a flat key-value mapping")

    scalars = {'c', 'alpha', 'policy', 'norm', 'k_min', 'k_max'}
    pi_values: Dict[str, float] = {}
    settings = {}
    for key, value in data.items():
        key = str(key)
        if key.startswith('pi.'):
            pi_values[key[3:]] = value
        elif key in scalars:
            settings[key] = value
        else:
            raise InvalidCaliperSpec(f"Unknown key '{key}' in caliper config {path}")

    missing = [c for c in columns if c not in pi_values]
    if missing:
        raise MissingColumn(f"Caliper config {path} has no pi entry for: {', '.join(missing)}")
    extra = sorted(set(pi_values) - set(columns))
    if extra:
        raise MissingColumn(f"Caliper config {path} names unknown covariates: {', '.join(extra)}")

    try:
        pi = tuple(float(pi_values[c]) for c in columns)
        numeric = {k: float(settings[k]) for k in ('c', 'alpha') if k in settings}
        numeric.update({k: int(settings[k]) for k in ('k_min', 'k_max') if k in settings})
    except (TypeError, ValueError) as e:
        raise InvalidCaliperSpec(f"Non-numeric entry in caliper config {path}: {e}") from e

    return CaliperSpec(columns=tuple(columns), pi=pi,
                       policy=settings.get('policy', Policy.FIXED),
                       norm=settings.get('norm', Norm.LINF), **numeric)


def save_caliper_spec(spec: CaliperSpec, path: str) -> str:
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(spec.to_dict(), f, sort_keys=False, default_flow_style=False)
    return path
