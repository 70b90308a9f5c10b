"""SATT / FSATT point estimates, effective sample sizes and plug-in standard errors."""
import math
import logging
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .data_model import Dataset
from .errors import AllZeroWeights, EmptySubset, NoMultiUnitClusters
from .matcher import MatchResult
from .scm_solver import WeightSet

SATT = 'SATT'
FSATT = 'FSATT'
SUBSET = 'SUBSET'


@dataclass(frozen=True)
class EffectEstimate:
    """Point estimate with plug-in inference.

    se_hat, s2 and the interval are None when no matched set has two or more
    controls; the point estimate is still valid then.
    """
    tau_hat: float
    se_hat: Optional[float]
    ci_lo: Optional[float]
    ci_hi: Optional[float]
    s2: Optional[float]
    ess_control: float
    ess_treated: float
    n_treated_used: int
    n_clusters_used: int
    estimand: str
    level: float

    @property
    def se_available(self) -> bool:
        return self.se_hat is not None

    def covers(self, value: float) -> bool:
        return self.se_available and self.ci_lo <= value <= self.ci_hi

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def check_subset(ws: WeightSet, subset: Sequence[str]) -> Tuple[str, ...]:
    subset = tuple(subset)
    if not subset:
        raise EmptySubset("Cannot estimate over an empty set of treated units")
    missing = [t for t in subset if not ws.has(t)]
    if missing:
        raise EmptySubset(f"Treated units without weights: {', '.join(missing)}")
    return subset


def att_point_estimate(ds: Dataset, ws: WeightSet, subset: Sequence[str]) -> float:
    """Average over the subset of Y_t minus the weighted control outcome."""
    subset = check_subset(ws, subset)
    gaps = []
    for treated_id in subset:
        u = ws.unit(treated_id)
        gaps.append(ds.Y[u.treated_index] - math.fsum(u.weights * ds.Y[u.control_index]))
    return math.fsum(gaps) / len(subset)


def ess(weights) -> float:
    """Effective sample size (sum w)^2 / sum w^2."""
    w = np.asarray(weights, dtype=float)
    total = math.fsum(w)
    if not total > 0:
        raise AllZeroWeights("Effective sample size needs a positive total weight")
    return total * total / math.fsum(w * w)


def control_ess(ws: WeightSet, subset: Sequence[str]) -> float:
    """ESS of the control side, aggregating each control's weight over the subset."""
    return ess(list(ws.control_totals(check_subset(ws, subset)).values()))


def pooled_residual_variance(ds: Dataset, mr: MatchResult,
                             subset: Optional[Sequence[str]] = None) -> Tuple[float, int, int]:
    """Pooled within-cluster outcome variance over matched sets with at least two controls.

    Returns (S^2, number of clusters used, N_C). Uniform weights are used within
    each cluster regardless of the weighting scheme.
    """
    members = mr.treated_ids if subset is None else tuple(subset)
    weighted_sum = []
    n_c = 0
    n_clusters = 0
    for treated_id in members:
        u = mr.unit(treated_id)
        if u.size < 2:
            continue
        y = ds.Y[u.control_index]
        s2_t = float(np.sum((y - y.mean()) ** 2)) / (u.size - 1)
        weighted_sum.append(u.size * s2_t)
        n_c += u.size
        n_clusters += 1
    if n_clusters == 0:
        raise NoMultiUnitClusters("No matched set has two or more controls; the standard error is unavailable")
    return math.fsum(weighted_sum) / n_c, n_clusters, n_c


def plug_in_se(s2: float, n_treated: float, ess_control: float) -> float:
    """sqrt(S^2 (1/n_T + 1/ESS(C)))."""
    return math.sqrt(s2 * (1.0 / n_treated + 1.0 / ess_control))


def critical_value(level: float) -> float:
    return float(stats.norm.ppf(0.5 + level / 2.0))


def estimand_label(mr: MatchResult, subset: Sequence[str]) -> str:
    members = set(subset)
    if members == set(mr.feasible_ids):
        return FSATT
    if members == set(mr.treated_ids):
        return SATT
    return SUBSET


def estimate(ds: Dataset, mr: MatchResult, ws: WeightSet, subset: Sequence[str],
             level: float = 0.95, estimand: Optional[str] = None) -> EffectEstimate:
    """Point estimate, plug-in SE and normal confidence interval over a treated subset."""
    subset = check_subset(ws, subset)
    tau_hat = att_point_estimate(ds, ws, subset)
    ess_c = control_ess(ws, subset)
    n_used = len(subset)
    label = estimand or estimand_label(mr, subset)

    try:
        s2, n_clusters, _ = pooled_residual_variance(ds, mr, subset)
    except NoMultiUnitClusters as e:
        logging.warning(str(e))
        return EffectEstimate(tau_hat=tau_hat, se_hat=None, ci_lo=None, ci_hi=None, s2=None,
                              ess_control=ess_c, ess_treated=float(n_used), n_treated_used=n_used,
                              n_clusters_used=0, estimand=label, level=level)

    se_hat = plug_in_se(s2, n_used, ess_c)
    half_width = critical_value(level) * se_hat
    return EffectEstimate(
        tau_hat=tau_hat,
        se_hat=se_hat,
        ci_lo=tau_hat - half_width,
        ci_hi=tau_hat + half_width,
        s2=s2,
        ess_control=ess_c,
        ess_treated=float(n_used),
        n_treated_used=n_used,
        n_clusters_used=n_clusters,
        estimand=label,
        level=level,
    )


def bias_term(ds: Dataset, ws: WeightSet, subset: Sequence[str], f0_values) -> float:
    """Bias component of tau_hat - tau: mean over t of sum_j w_jt (f0(X_t) - f0(X_j)).

    f0_values holds f0 evaluated at every unit of the dataset, in row order.
    """
    subset = check_subset(ws, subset)
    f0_values = np.asarray(f0_values, dtype=float)
    terms = []
    for treated_id in subset:
        u = ws.unit(treated_id)
        terms.append(math.fsum(u.weights * (f0_values[u.treated_index] - f0_values[u.control_index])))
    return math.fsum(terms) / len(subset)


def difference_in_means(ds: Dataset) -> float:
    """Raw treated-minus-control outcome mean."""
    return math.fsum(ds.Y[ds.treated_idx]) / ds.n_treated - math.fsum(ds.Y[ds.control_idx]) / ds.n_control
