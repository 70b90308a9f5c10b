"""Radius matching under fixed, adaptive and k-bounded calipers, plus the 1-NN and CEM comparators."""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data_model import CaliperSpec, Dataset, Policy, default_caliper, is_binary_column
from .distance import DistanceMatrix, distance_matrix
from .errors import ConstantNonBinaryColumn, DimensionMismatch, EmptyControlPool, InvalidCaliperSpec


class MatchMethod(str, Enum):
    RADIUS = 'radius'
    ONE_NN = '1nn'
    CEM = 'cem'


@dataclass(frozen=True, eq=False)
class UnitMatch:
    """Matched control set of one treated unit."""
    treated_id: str
    treated_index: int
    control_ids: Tuple[str, ...]
    control_index: np.ndarray
    distances: np.ndarray
    c_t: float
    d_t: float
    feasible: bool

    @property
    def size(self) -> int:
        return len(self.control_ids)


@dataclass(frozen=True, eq=False)
class MatchResult:
    units: Tuple[UnitMatch, ...]
    method: MatchMethod
    spec_used: Optional[CaliperSpec]

    def __post_init__(self):
        object.__setattr__(self, '_by_id', {u.treated_id: u for u in self.units})

    def unit(self, treated_id: str) -> UnitMatch:
        return self._by_id[treated_id]

    @property
    def treated_ids(self) -> Tuple[str, ...]:
        return tuple(u.treated_id for u in self.units)

    @property
    def feasible_ids(self) -> Tuple[str, ...]:
        return tuple(u.treated_id for u in self.units if u.feasible)

    @property
    def infeasible_ids(self) -> Tuple[str, ...]:
        return tuple(u.treated_id for u in self.units if not u.feasible)

    @property
    def matched_ids(self) -> Tuple[str, ...]:
        """Treated units with at least one matched control."""
        return tuple(u.treated_id for u in self.units if u.size > 0)

    def rows(self) -> List[Dict[str, object]]:
        """Long format: one row per matched pair, infeasible units get one empty row."""
        rows = []
        for u in self.units:
            if u.size == 0:
                rows.append({'treated_id': u.treated_id, 'control_id': '', 'distance': '',
                             'c_t': u.c_t, 'feasible': u.feasible, 'method': self.method.value})
            for control_id, dist in zip(u.control_ids, u.distances):
                rows.append({'treated_id': u.treated_id, 'control_id': control_id, 'distance': float(dist),
                             'c_t': u.c_t, 'feasible': u.feasible, 'method': self.method.value})
        return rows


def _check_consistent(ds: Dataset, D: DistanceMatrix):
    if D.treated_ids != ds.treated_ids or D.control_ids != ds.control_ids:
        raise DimensionMismatch("Distance matrix was not built from this dataset")
    if D.d.shape[1] == 0:
        raise EmptyControlPool("No control units to match against")


def _unit(D: DistanceMatrix, t: int, selected: np.ndarray, c_t: float, d_t: float, feasible: bool) -> UnitMatch:
    row = D.d[t]
    # closest first, ties by control id
    order = sorted(selected.tolist(), key=lambda j: (row[j], D.control_ids[j]))
    return UnitMatch(
        treated_id=D.treated_ids[t],
        treated_index=int(D.treated_idx[t]),
        control_ids=tuple(D.control_ids[j] for j in order),
        control_index=np.array([D.control_idx[j] for j in order], dtype=int),
        distances=np.array([row[j] for j in order], dtype=float),
        c_t=float(c_t),
        d_t=float(d_t),
        feasible=bool(feasible),
    )


def realized_caliper(row: np.ndarray, spec: CaliperSpec) -> float:
    """Per-unit caliper c_t for one row of treated-to-control distances."""
    d_t = float(row.min())
    if spec.policy is Policy.FIXED:
        # infeasible units record the caliper they would have needed
        return spec.c if d_t <= spec.c else d_t
    if spec.policy is Policy.ADAPTIVE:
        return max(spec.c, spec.alpha * d_t)
    ordered = np.sort(row)
    d_kmin = float(ordered[min(spec.k_min, len(ordered)) - 1])
    d_kmax = float(ordered[min(spec.k_max, len(ordered)) - 1])
    return max(d_kmin, min(spec.c, d_kmax))


def radius_match(ds: Dataset, D: DistanceMatrix, spec: CaliperSpec) -> MatchResult:
    """Match every treated unit to all controls within its caliper, with replacement."""
    _check_consistent(ds, D)
    if D.norm is not spec.norm:
        raise DimensionMismatch(f"Distance matrix uses {D.norm.value} but caliper spec asks for {spec.norm.value}")

    units = []
    for t in range(D.d.shape[0]):
        row = D.d[t]
        d_t = float(row.min())
        feasible = d_t <= spec.c
        c_t = realized_caliper(row, spec)
        if spec.policy is Policy.FIXED and not feasible:
            selected = np.array([], dtype=int)
        else:
            selected = np.flatnonzero(row <= c_t)
        units.append(_unit(D, t, selected, c_t, d_t, feasible))

    result = MatchResult(units=tuple(units), method=MatchMethod.RADIUS, spec_used=spec)
    infeasible = result.infeasible_ids
    if infeasible:
        if spec.policy is Policy.FIXED:
            logging.warning(f"{len(infeasible)} treated units have no control within c={spec.c}: "
                            f"{', '.join(infeasible)}")
        else:
            logging.info(f"{len(infeasible)} treated units matched beyond c={spec.c} ({spec.policy.value})")
    return result


def one_nn_match(ds: Dataset, D: DistanceMatrix, spec: Optional[CaliperSpec] = None) -> MatchResult:
    """Match each treated unit to its nearest control(s), keeping exact ties."""
    _check_consistent(ds, D)
    units = []
    for t in range(D.d.shape[0]):
        row = D.d[t]
        d_t = float(row.min())
        feasible = True if spec is None else d_t <= spec.c
        units.append(_unit(D, t, np.flatnonzero(row == d_t), d_t, d_t, feasible))
    return MatchResult(units=tuple(units), method=MatchMethod.ONE_NN, spec_used=spec)


def coarsen(ds: Dataset, bins: int = 5) -> np.ndarray:
    """Bin signature of every unit: equal-width bins per continuous covariate, binary kept as-is."""
    if bins < 1:
        raise InvalidCaliperSpec(f"bins must be a positive integer, got {bins}")
    codes = np.empty(ds.X.shape, dtype=np.int64)
    for k, name in enumerate(ds.column_names):
        column = ds.X[:, k]
        if is_binary_column(column):
            codes[:, k] = column.astype(np.int64)
            continue
        lo, hi = float(column.min()), float(column.max())
        if hi <= lo:
            raise ConstantNonBinaryColumn(f"Covariate '{name}' is constant and not binary; it cannot be coarsened")
        width = (hi - lo) / bins
        inner_edges = lo + width * np.arange(1, bins)
        # right-open bins, the top bin also takes the maximum
        codes[:, k] = np.searchsorted(inner_edges, column, side='right')
    return codes


def cem_match(ds: Dataset, bins: int = 5) -> MatchResult:
    """Coarsened exact matching: treated units match every control with the same bin signature."""
    codes = coarsen(ds, bins)
    spec = default_caliper(ds, bins)
    D = distance_matrix(ds, spec)

    strata: Dict[Tuple[int, ...], List[int]] = {}
    for j, idx in enumerate(D.control_idx):
        strata.setdefault(tuple(codes[idx]), []).append(j)

    units = []
    for t, idx in enumerate(D.treated_idx):
        selected = np.array(strata.get(tuple(codes[idx]), []), dtype=int)
        d_t = float(D.d[t].min())
        c_t = float(D.d[t][selected].max()) if selected.size else d_t
        units.append(_unit(D, t, selected, c_t, d_t, selected.size > 0))

    result = MatchResult(units=tuple(units), method=MatchMethod.CEM, spec_used=spec)
    if result.infeasible_ids:
        logging.info(f"CEM: {len(result.infeasible_ids)} treated units fall in strata without controls")
    return result


def feasible_subsets(mr: MatchResult) -> List[Tuple[str, ...]]:
    """Nested treated subsets: the feasible set, then infeasible units one at a time by ascending c_t."""
    key = lambda u: (u.c_t, u.treated_id)
    feasible = sorted((u for u in mr.units if u.feasible), key=key)
    infeasible = sorted((u for u in mr.units if not u.feasible), key=key)

    current = [u.treated_id for u in feasible]
    subsets = [tuple(current)] if current else []
    for u in infeasible:
        current.append(u.treated_id)
        subsets.append(tuple(current))
    return subsets


def subset_by_caliper(mr: MatchResult, max_caliper: float) -> Tuple[str, ...]:
    """Treated units whose realized caliper does not exceed max_caliper."""
    return tuple(u.treated_id for u in mr.units if u.c_t <= max_caliper and u.size > 0)


def select_subset(mr: MatchResult, policy: str) -> Tuple[str, ...]:
    """Resolve a subset policy: 'feasible', 'all' or 'max-caliper:<x>'."""
    policy = policy.strip().lower()
    if policy == 'feasible':
        return tuple(u.treated_id for u in mr.units if u.feasible and u.size > 0)
    if policy == 'all':
        if len(mr.matched_ids) < len(mr.units):
            logging.warning(f"{len(mr.units) - len(mr.matched_ids)} treated units have no matched controls "
                            f"and are left out of the 'all' subset")
        return mr.matched_ids
    for prefix in ('max-caliper:', 'max-caliper=', 'max-caliper<='):
        if policy.startswith(prefix):
            try:
                return subset_by_caliper(mr, float(policy[len(prefix):]))
            except ValueError:
                break
    raise InvalidCaliperSpec(f"Unknown subset policy '{policy}' (expected feasible, all or max-caliper:<x>)")


def describe(mr: MatchResult, quantiles: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 0.9, 1.0)) -> Dict[str, object]:
    """Feasible count and c_t quantiles, for the match summary."""
    c_values = np.array([u.c_t for u in mr.units])
    return {
        'n_treated': len(mr.units),
        'n_feasible': len(mr.feasible_ids),
        'pct_feasible': 100.0 * len(mr.feasible_ids) / len(mr.units),
        'n_pairs': int(sum(u.size for u in mr.units)),
        'c_t_quantiles': {f"{q:g}": float(np.quantile(c_values, q)) for q in quantiles},
    }
