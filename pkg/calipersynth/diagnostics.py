"""Balance tables, nested-subset series, caliper histograms and the exact transport oracle."""
import math
import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .data_model import CaliperSpec, Dataset, Norm, ScalingMatrix, parse_norm
from .distance import DistanceMatrix, scaled_distance, scaled_distances_to
from .errors import ConfigError, DimensionMismatch, InsufficientControls, InvalidCaliperSpec, SizeLimitExceeded
from .estimator import EffectEstimate, check_subset, control_ess, estimate
from .matcher import MatchResult, feasible_subsets
from .scm_solver import DEFAULT_MAX_ITER, DEFAULT_TOL, WeightScheme, WeightSet, assign_weights
from .simplex import solve_lp

# Largest support per side accepted by the transport LP.
MAX_TRANSPORT_POINTS = 64
MASS_TOL = 1e-12
HISTOGRAM_QUANTILES = (0.25, 0.5, 0.75, 0.9)


@dataclass(frozen=True)
class CovariateBalance:
    covariate: str
    treated_mean: float
    control_mean: float
    abs_diff: float
    bound: float
    within_bound: bool


@dataclass(frozen=True)
class BalanceReport:
    """Marginal and joint balance of the weighted controls against a treated subset."""
    covariates: Tuple[CovariateBalance, ...]
    joint_distance: float
    joint_bound: float
    norm: Norm
    n_treated_used: int

    @property
    def within_bound(self) -> bool:
        return all(row.within_bound for row in self.covariates) and self.joint_distance <= self.joint_bound

    def rows(self) -> List[Dict[str, object]]:
        return [
            {'covariate': row.covariate, 'treated_mean': row.treated_mean, 'control_mean': row.control_mean,
             'abs_diff': row.abs_diff, 'bound': row.bound, 'within_bound': row.within_bound}
            for row in self.covariates
        ] + [
            {'covariate': f'joint_{self.norm.value}', 'treated_mean': '', 'control_mean': '',
             'abs_diff': self.joint_distance, 'bound': self.joint_bound,
             'within_bound': self.joint_distance <= self.joint_bound}
        ]


def weighted_means(ds: Dataset, ws: WeightSet, subset: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
    """Treated mean and weighted control mean of every covariate over the subset."""
    subset = check_subset(ws, subset)
    units = [ws.unit(t) for t in subset]
    treated = np.empty(ds.p)
    control = np.empty(ds.p)
    for k in range(ds.p):
        treated[k] = math.fsum(ds.X[u.treated_index, k] for u in units) / len(units)
        control[k] = math.fsum(
            w * x for u in units for w, x in zip(u.weights, ds.X[u.control_index, k])
        ) / len(units)
    return treated, control


def balance_report(ds: Dataset, ws: WeightSet, subset: Sequence[str], spec: CaliperSpec) -> BalanceReport:
    """Per-covariate |mean difference| against c * pi_k and the joint d_V gap against c."""
    treated, control = weighted_means(ds, ws, subset)
    rows = []
    for k, name in enumerate(ds.column_names):
        diff = abs(treated[k] - control[k])
        bound = spec.c * spec.pi[k]
        rows.append(CovariateBalance(
            covariate=name,
            treated_mean=float(treated[k]),
            control_mean=float(control[k]),
            abs_diff=float(diff),
            bound=bound,
            within_bound=bool(diff <= bound),
        ))
    joint = scaled_distance(treated, control, spec.scaling(), spec.norm)
    return BalanceReport(covariates=tuple(rows), joint_distance=joint, joint_bound=spec.c,
                         norm=spec.norm, n_treated_used=len(tuple(subset)))


def _max_caliper(mr: MatchResult, subset: Sequence[str]) -> float:
    return max(mr.unit(t).c_t for t in subset)


def _nested_subsets(mr: MatchResult) -> List[Tuple[str, ...]]:
    unmatched = [u.treated_id for u in mr.units if u.size == 0]
    if unmatched:
        raise InvalidCaliperSpec(f"Nested subsets need a match for every treated unit (use the adaptive policy); "
                                 f"unmatched: {', '.join(unmatched)}")
    return feasible_subsets(mr)


def love_plot_series(ds: Dataset, mr: MatchResult, ws: WeightSet, spec: CaliperSpec) -> List[Dict[str, object]]:
    """Balance over the nested subsets, long format: one row per (subset, covariate)."""
    rows = []
    for step, subset in enumerate(_nested_subsets(mr)):
        report = balance_report(ds, ws, subset, spec)
        for row in report.rows():
            rows.append({'step': step, 'n_treated_used': len(subset), 'max_c_t': _max_caliper(mr, subset),
                         'added_id': subset[-1] if step else '', **row})
    return rows


@dataclass(frozen=True)
class FrontierPoint:
    step: int
    added_id: str
    max_c_t: float
    estimate: EffectEstimate


def frontier_series(ds: Dataset, mr: MatchResult, ws: WeightSet, spec: CaliperSpec,
                    level: float = 0.95) -> List[FrontierPoint]:
    """Effect estimates as harder-to-match treated units are added back one at a time."""
    points = []
    for step, subset in enumerate(_nested_subsets(mr)):
        points.append(FrontierPoint(
            step=step,
            added_id=subset[-1] if step else '',
            max_c_t=_max_caliper(mr, subset),
            estimate=estimate(ds, mr, ws, subset, level=level),
        ))
    return points


def frontier_rows(points: Sequence[FrontierPoint]) -> List[Dict[str, object]]:
    rows = []
    for point in points:
        e = point.estimate
        rows.append({
            'step': point.step, 'added_id': point.added_id, 'max_c_t': point.max_c_t,
            'tau_hat': e.tau_hat, 'se_hat': '' if e.se_hat is None else e.se_hat,
            'ci_lo': '' if e.ci_lo is None else e.ci_lo, 'ci_hi': '' if e.ci_hi is None else e.ci_hi,
            'ess_control': e.ess_control, 'n_treated_used': e.n_treated_used, 'estimand': e.estimand,
        })
    return rows


@dataclass(frozen=True, eq=False)
class DistanceHistogram:
    rank: int
    edges: np.ndarray
    counts: np.ndarray
    quantiles: Dict[float, float]


def topk_distance_histogram(D: DistanceMatrix, k: int, n_bins: int = 30) -> List[DistanceHistogram]:
    """Histogram of the r-th closest control distance per treated unit, for r = 1..k.

    All ranks share n_bins equal-width bins over the pooled range of the k
    ranks, so the histograms are directly comparable.
    """
    if k < 1 or n_bins < 1:
        raise ConfigError(f"Need k >= 1 and n_bins >= 1, got k={k}, n_bins={n_bins}")
    if D.shape[1] < k:
        raise InsufficientControls(f"Only {D.shape[1]} controls available for the {k} closest distances")

    ranked = np.sort(D.d, axis=1)[:, :k]
    lo, hi = float(ranked.min()), float(ranked.max())
    histograms = []
    for r in range(k):
        counts, edges = np.histogram(ranked[:, r], bins=n_bins, range=(lo, hi))
        quantiles = {q: float(np.quantile(ranked[:, r], q)) for q in HISTOGRAM_QUANTILES}
        histograms.append(DistanceHistogram(rank=r + 1, edges=edges, counts=counts, quantiles=quantiles))
    return histograms


def histogram_rows(histograms: Sequence[DistanceHistogram]) -> List[Dict[str, object]]:
    return [
        {'rank': h.rank, 'bin': b, 'left': float(h.edges[b]), 'right': float(h.edges[b + 1]),
         'count': int(h.counts[b])}
        for h in histograms
        for b in range(len(h.counts))
    ]


def quantile_rows(histograms: Sequence[DistanceHistogram]) -> List[Dict[str, object]]:
    return [
        {'rank': h.rank, **{f'q{int(round(q * 100))}': value for q, value in h.quantiles.items()}}
        for h in histograms
    ]


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Finite weighted sum of point masses."""
    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        masses = np.asarray(self.masses, dtype=float)
        if masses.ndim != 1 or points.shape[0] != masses.shape[0]:
            raise DimensionMismatch(f"{points.shape[0]} points but {masses.shape[0]} masses")
        if np.any(masses < 0):
            raise DimensionMismatch("Measure masses must be non-negative")
        if abs(math.fsum(masses) - 1.0) > MASS_TOL:
            raise DimensionMismatch(f"Measure masses sum to {math.fsum(masses)!r}, expected 1")
        object.__setattr__(self, 'points', points)
        object.__setattr__(self, 'masses', masses)

    @property
    def size(self) -> int:
        return self.points.shape[0]


def wasserstein_exact(fT: EmpiricalMeasure, fC: EmpiricalMeasure, V: ScalingMatrix,
                      norm=Norm.LINF, q: float = 1) -> float:
    """Exact q-Wasserstein distance in d_V, from the optimal transport LP."""
    norm = parse_norm(norm)
    if q < 1:
        raise ConfigError(f"Wasserstein order q must be >= 1, got {q}")
    if fT.size > MAX_TRANSPORT_POINTS or fC.size > MAX_TRANSPORT_POINTS:
        raise SizeLimitExceeded(f"Transport oracle takes at most {MAX_TRANSPORT_POINTS} points per side, "
                                f"got {fT.size} and {fC.size}")
    if fT.points.shape[1] != V.p or fC.points.shape[1] != V.p:
        raise DimensionMismatch("Measure dimension does not match the scaling")

    n_t, n_c = fT.size, fC.size
    cost = np.vstack([scaled_distances_to(x, fC.points, V, norm) for x in fT.points]) ** q

    # gamma flattened row-major: gamma[i, j] -> i * n_c + j
    A_eq = np.zeros((n_t + n_c, n_t * n_c))
    for i in range(n_t):
        A_eq[i, i * n_c:(i + 1) * n_c] = 1.0
    for j in range(n_c):
        A_eq[n_t + j, j::n_c] = 1.0
    b_eq = np.concatenate([fT.masses, fC.masses])

    result = solve_lp(cost.ravel(), A_eq=A_eq, b_eq=b_eq)
    logging.debug(f"Transport LP {n_t}x{n_c}: {result.iterations} pivots")
    return max(result.objective, 0.0) ** (1.0 / q)


def matched_measures(ds: Dataset, ws: WeightSet, subset: Sequence[str]) -> Tuple[EmpiricalMeasure, EmpiricalMeasure]:
    """f_T uniform over the subset's treated units, f_C their aggregated control weights."""
    subset = check_subset(ws, subset)
    treated_index = [ws.unit(t).treated_index for t in subset]
    fT = EmpiricalMeasure(points=ds.X[treated_index], masses=np.full(len(subset), 1.0 / len(subset)))

    totals = ws.control_totals(subset)
    index = list(totals)
    masses = np.array([totals[j] for j in index])
    fC = EmpiricalMeasure(points=ds.X[index], masses=masses / math.fsum(masses))
    return fT, fC


def coupling_cost(ds: Dataset, ws: WeightSet, subset: Sequence[str], spec: CaliperSpec, q: float = 1) -> float:
    """Transport cost of sending each treated unit to its own weighted controls.

    A feasible coupling of the matched measures, so it bounds the exact
    Wasserstein distance from above.
    """
    subset = check_subset(ws, subset)
    V = spec.scaling()
    terms = []
    for treated_id in subset:
        u = ws.unit(treated_id)
        d = scaled_distances_to(ds.X[u.treated_index], ds.X[u.control_index], V, spec.norm)
        terms.extend((u.weights * d ** q).tolist())
    return max(math.fsum(terms) / len(subset), 0.0) ** (1.0 / q)


@dataclass(frozen=True)
class WeightingSummary:
    scheme: str
    mean_imbalance: float
    median_imbalance: float
    max_imbalance: float
    ess_control: float
    n_controls_used: int


def weighting_comparison(ds: Dataset, mr: MatchResult, spec: CaliperSpec, subset: Sequence[str] = None,
                         tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> List[WeightingSummary]:
    """Per-unit imbalance and control ESS of the SCM, uniform and 1-NN weights on the same matched sets."""
    summaries = []
    for scheme in (WeightScheme.SCM, WeightScheme.UNIFORM, WeightScheme.ONE_NN):
        ws = assign_weights(mr, ds, spec, scheme=scheme, tol=tol, max_iter=max_iter)
        members = check_subset(ws, mr.matched_ids if subset is None else subset)
        imbalance = np.array([ws.unit(t).imbalance for t in members])
        totals = ws.control_totals(members)
        summaries.append(WeightingSummary(
            scheme=scheme.value,
            mean_imbalance=math.fsum(imbalance) / len(imbalance),
            median_imbalance=float(np.median(imbalance)),
            max_imbalance=float(imbalance.max()),
            ess_control=control_ess(ws, members),
            n_controls_used=sum(1 for w in totals.values() if w > 0),
        ))
    return summaries
