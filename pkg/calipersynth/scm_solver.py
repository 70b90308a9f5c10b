"""Synthetic-control weights inside each matched set.

Each treated unit is projected onto the convex hull of its matched controls in
the caliper-scaled metric: a linear program for L-infinity, a min-norm-point
(fully corrective Frank-Wolfe) iteration for L2.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data_model import CaliperSpec, Dataset, Norm, ScalingMatrix
from .distance import scaled_distance
from .errors import ConfigError, DimensionMismatch, SolverFailure
from .matcher import MatchResult, UnitMatch
from .simplex import solve_lp

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10000
AFFINE_TOL = 1e-14


class WeightScheme(str, Enum):
    SCM = 'scm'
    UNIFORM = 'uniform'
    ONE_NN = '1nn'


def parse_scheme(value) -> WeightScheme:
    if isinstance(value, WeightScheme):
        return value
    key = str(value).strip().lower()
    aliases = {'one_nn': '1nn', 'nn': '1nn', 'avg': 'uniform', 'average': 'uniform'}
    try:
        return WeightScheme(aliases.get(key, key))
    except ValueError as e:
        raise ConfigError(f"Unknown weight scheme '{value}' (expected scm, uniform or 1nn)") from e


def _on_simplex(w: np.ndarray) -> np.ndarray:
    w = np.maximum(np.asarray(w, dtype=float), 0.0)
    total = w.sum()
    if not total > 0:
        raise SolverFailure("Solver returned all-zero weights")
    return w / total


def _check_inputs(x_t, Xc, V: ScalingMatrix) -> Tuple[np.ndarray, np.ndarray]:
    x_t = np.asarray(x_t, dtype=float)
    Xc = np.atleast_2d(np.asarray(Xc, dtype=float))
    if Xc.shape[0] < 1:
        raise DimensionMismatch("Need at least one control to build a synthetic control")
    if x_t.ndim != 1 or Xc.shape[1] != x_t.shape[0] or x_t.shape[0] != V.p:
        raise DimensionMismatch(f"Treated vector {x_t.shape} and control matrix {Xc.shape} do not fit {V.p} calipers")
    return x_t, Xc


def _best_candidate(x_t, Xc, V, norm: Norm, solved: np.ndarray) -> Tuple[np.ndarray, float]:
    """Keep the solver's weights unless the nearest vertex or uniform weights do better."""
    m = Xc.shape[0]
    vertex = np.zeros(m)
    gaps = V.scale(Xc - x_t)
    vertex[int(np.argmin(np.abs(gaps).max(axis=1) if norm is Norm.LINF else (gaps * gaps).sum(axis=1)))] = 1.0
    best_w, best_value = None, np.inf
    for w in (solved, vertex, np.full(m, 1.0 / m)):
        value = scaled_distance(x_t, w @ Xc, V, norm)
        if value < best_value:
            best_w, best_value = w, value
    return best_w, best_value


def scm_weights_linf(x_t, Xc, V: ScalingMatrix, tol: float = DEFAULT_TOL) -> Tuple[np.ndarray, float]:
    """Convex weights minimizing the scaled L-infinity gap between x_t and the weighted controls.

    LP: min y  s.t.  -y <= [V(x_t - sum_j w_j X_j)]_k <= y,  sum w = 1,  w >= 0.
    """
    x_t, Xc = _check_inputs(x_t, Xc, V)
    m, p = Xc.shape
    if m == 1:
        return np.ones(1), scaled_distance(x_t, Xc[0], V, Norm.LINF)

    # with sum w = 1 the residual is -sum_j w_j G_j for scaled gaps G = V(X_j - x_t)
    G = V.scale(Xc - x_t)
    A_ub = np.zeros((2 * p, m + 1))
    A_ub[:p, :m] = G.T
    A_ub[p:, :m] = -G.T
    A_ub[:, m] = -1.0
    A_eq = np.zeros((1, m + 1))
    A_eq[0, :m] = 1.0
    cost = np.zeros(m + 1)
    cost[m] = 1.0

    result = solve_lp(cost, A_ub=A_ub, b_ub=np.zeros(2 * p), A_eq=A_eq, b_eq=np.ones(1))
    w = _on_simplex(result.x[:m])
    w, imbalance = _best_candidate(x_t, Xc, V, Norm.LINF, w)
    if imbalance > result.objective + max(tol, 1e-9 * max(1.0, result.objective)):
        raise SolverFailure(f"L-infinity SCM weights miss the LP optimum ({imbalance:.3g} vs {result.objective:.3g})")
    return w, imbalance


def _affine_minimizer(Q: np.ndarray) -> np.ndarray:
    """Minimum-norm point of the affine hull of the rows of Q, as affine coefficients."""
    k = Q.shape[0]
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = Q @ Q.T
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    solution = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return solution[:k]


def scm_weights_l2(x_t, Xc, V: ScalingMatrix, tol: float = DEFAULT_TOL,
                   max_iter: int = DEFAULT_MAX_ITER) -> Tuple[np.ndarray, float]:
    """Convex weights minimizing the scaled L2 gap, by Wolfe's min-norm-point iteration.

    Stops once the Frank-Wolfe duality gap of the squared objective is <= tol**2,
    or when the best vertex is already in the active set.
    """
    x_t, Xc = _check_inputs(x_t, Xc, V)
    m = Xc.shape[0]
    if m == 1:
        return np.ones(1), scaled_distance(x_t, Xc[0], V, Norm.L2)

    P = V.scale(Xc - x_t)
    start = int(np.argmin(np.einsum('ij,ij->i', P, P)))
    active: List[int] = [start]
    lam = np.ones(1)
    u = P[start].copy()

    for iteration in range(max_iter):
        scores = P @ u
        j = int(np.argmin(scores))
        uu = float(u @ u)
        gap = 2.0 * (uu - float(scores[j]))
        if gap <= tol * tol or j in active:
            break

        active.append(j)
        lam = np.append(lam, 0.0)
        while True:
            alpha = _affine_minimizer(P[active])
            if np.all(alpha > AFFINE_TOL):
                lam = alpha
                break
            # step toward the affine minimizer until a coefficient hits zero
            blocking = np.flatnonzero((alpha <= AFFINE_TOL) & (lam - alpha > 0))
            theta = min(lam[i] / (lam[i] - alpha[i]) for i in blocking) if blocking.size else 0.0
            lam = theta * alpha + (1.0 - theta) * lam
            keep = lam > AFFINE_TOL
            if keep.all():
                keep[int(np.argmin(lam))] = False
            active = [a for a, k in zip(active, keep) if k]
            lam = lam[keep] / lam[keep].sum()
            if len(active) == 1:
                lam = np.ones(1)
                break

        u_next = lam @ P[active]
        if float(u_next @ u_next) >= uu:
            break
        u = u_next
    else:
        raise SolverFailure(f"L2 SCM did not converge within {max_iter} iterations")

    logging.debug(f"L2 SCM: {iteration + 1} iterations, {len(active)} active controls")
    w = np.zeros(m)
    w[active] = lam
    return _best_candidate(x_t, Xc, V, Norm.L2, _on_simplex(w))


@dataclass(frozen=True, eq=False)
class UnitWeights:
    treated_id: str
    treated_index: int
    control_ids: Tuple[str, ...]
    control_index: np.ndarray
    weights: np.ndarray
    imbalance: float


@dataclass(frozen=True, eq=False)
class WeightSet:
    units: Tuple[UnitWeights, ...]
    scheme: WeightScheme
    norm: Norm
    skipped: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, '_by_id', {u.treated_id: u for u in self.units})

    def unit(self, treated_id: str) -> UnitWeights:
        return self._by_id[treated_id]

    def has(self, treated_id: str) -> bool:
        return treated_id in self._by_id

    @property
    def treated_ids(self) -> Tuple[str, ...]:
        return tuple(u.treated_id for u in self.units)

    def control_totals(self, subset: Sequence[str]) -> Dict[int, float]:
        """Aggregate weight sum_t w_jt per distinct control over the subset."""
        totals: Dict[int, List[float]] = {}
        for treated_id in subset:
            u = self.unit(treated_id)
            for j, w in zip(u.control_index, u.weights):
                totals.setdefault(int(j), []).append(float(w))
        return {j: float(np.sum(sorted(ws))) for j, ws in sorted(totals.items())}

    def rows(self) -> List[Dict[str, object]]:
        return [
            {'treated_id': u.treated_id, 'control_id': control_id, 'weight': float(w),
             'scheme': self.scheme.value, 'imbalance': u.imbalance}
            for u in self.units
            for control_id, w in zip(u.control_ids, u.weights)
        ]


def _unit_weights(um: UnitMatch, ds: Dataset, V: ScalingMatrix, norm: Norm, scheme: WeightScheme,
                  tol: float, max_iter: int) -> UnitWeights:
    x_t = ds.X[um.treated_index]
    Xc = ds.X[um.control_index]
    m = um.size
    if scheme is WeightScheme.UNIFORM:
        w = np.full(m, 1.0 / m)
        imbalance = scaled_distance(x_t, w @ Xc, V, norm)
    elif scheme is WeightScheme.ONE_NN:
        nearest = um.distances == um.distances.min()
        w = np.where(nearest, 1.0 / int(nearest.sum()), 0.0)
        imbalance = scaled_distance(x_t, w @ Xc, V, norm)
    elif norm is Norm.LINF:
        w, imbalance = scm_weights_linf(x_t, Xc, V, tol)
    else:
        w, imbalance = scm_weights_l2(x_t, Xc, V, tol, max_iter)
    return UnitWeights(
        treated_id=um.treated_id,
        treated_index=um.treated_index,
        control_ids=um.control_ids,
        control_index=um.control_index,
        weights=w,
        imbalance=float(imbalance),
    )


def assign_weights(mr: MatchResult, ds: Dataset, spec: CaliperSpec, scheme=WeightScheme.SCM,
                   tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, warn_skipped: bool = True) -> WeightSet:
    """Weights over every treated unit's matched set; units without matches are skipped."""
    scheme = parse_scheme(scheme)
    V = spec.scaling()
    units, skipped = [], []
    for um in mr.units:
        if um.size == 0:
            skipped.append(um.treated_id)
            continue
        units.append(_unit_weights(um, ds, V, spec.norm, scheme, tol, max_iter))
    if skipped:
        log = logging.warning if warn_skipped else logging.debug
        log(f"{len(skipped)} treated units have no matched controls and get no weights: {', '.join(skipped)}")
    return WeightSet(units=tuple(units), scheme=scheme, norm=spec.norm, skipped=tuple(skipped))
