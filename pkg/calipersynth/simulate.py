"""Toy data-generating process, synthetic outcome surfaces and the Monte Carlo harness."""
import math
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .data_model import CaliperSpec, Dataset, Norm, ScalingMatrix, default_caliper, parse_norm
from .distance import distance_matrix, scaled_distances_to
from .errors import ConfigError, LengthMismatch
from .estimator import att_point_estimate, bias_term, difference_in_means, estimate
from .matcher import cem_match, one_nn_match, radius_match
from .rng import CounterRNG
from .scm_solver import DEFAULT_MAX_ITER, DEFAULT_TOL, WeightScheme, assign_weights

TREATED_CENTERS = ((0.25, 0.25), (0.75, 0.75))
CONTROL_CENTERS = ((0.25, 0.75), (0.75, 0.25))


class OverlapLevel(str, Enum):
    VERY_LOW = 'very_low'
    LOW = 'low'
    MEDIUM = 'medium'
    HIGH = 'high'
    VERY_HIGH = 'very_high'


# Share of uniform controls in the pool; the total pool size stays fixed.
DEFAULT_OVERLAP_FRACTIONS = {
    OverlapLevel.VERY_LOW.value: 100 / 550,
    OverlapLevel.LOW.value: 0.375,
    OverlapLevel.MEDIUM.value: 0.55,
    OverlapLevel.HIGH.value: 0.725,
    OverlapLevel.VERY_HIGH.value: 0.9,
}


def parse_overlap(value) -> OverlapLevel:
    if isinstance(value, OverlapLevel):
        return value
    key = str(value).strip().lower().replace('-', '_')
    try:
        return OverlapLevel(key)
    except ValueError as e:
        choices = ', '.join(level.value for level in OverlapLevel)
        raise ConfigError(f"Unknown overlap level '{value}' (expected one of {choices})") from e


@dataclass(frozen=True)
class ToyDGPConfig:
    """Two treated clusters on the diagonal, two control clusters off it, plus uniform controls."""
    n_treated_per_center: int = 50
    n_control_per_center: int = 225
    n_uniform_controls: int = 100
    cluster_sd: float = 0.1
    noise_sd: float = 0.5
    effect_scale: float = 1.0
    overlap_level: Optional[OverlapLevel] = None
    overlap_fractions: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_OVERLAP_FRACTIONS))
    seed: int = 0
    trial: int = 0

    def __post_init__(self):
        counts = (self.n_treated_per_center, self.n_control_per_center, self.n_uniform_controls)
        if any(int(n) < 0 for n in counts):
            raise ConfigError("Toy DGP counts must be non-negative")
        if self.n_treated_per_center < 1:
            raise ConfigError("Toy DGP needs at least one treated unit per center")
        if self.n_control_per_center + self.n_uniform_controls < 1:
            raise ConfigError("Toy DGP needs at least one control source")
        if not (self.cluster_sd > 0 and self.noise_sd >= 0):
            raise ConfigError("cluster_sd must be positive and noise_sd non-negative")
        if self.overlap_level is not None:
            object.__setattr__(self, 'overlap_level', parse_overlap(self.overlap_level))

    @property
    def n_controls(self) -> int:
        return 2 * self.n_control_per_center + self.n_uniform_controls

    def control_counts(self) -> Tuple[int, int]:
        """(controls per off-diagonal center, uniform controls) after applying the overlap level."""
        if self.overlap_level is None:
            return self.n_control_per_center, self.n_uniform_controls
        fraction = float(self.overlap_fractions[self.overlap_level.value])
        if not 0.0 <= fraction <= 1.0:
            raise ConfigError(f"Overlap fraction for {self.overlap_level.value} must lie in [0, 1], got {fraction}")
        total = self.n_controls
        per_center = (total - round(fraction * total)) // 2
        return per_center, total - 2 * per_center


class GaussianDensity:
    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float)
        self.cov = np.asarray(cov, dtype=float)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return np.atleast_1d(stats.multivariate_normal(mean=self.mean, cov=self.cov).pdf(np.atleast_2d(X)))


class LinearFunction:
    def __init__(self, beta, intercept: float = 0.0):
        self.beta = np.asarray(beta, dtype=float)
        self.intercept = float(intercept)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + np.atleast_2d(X) @ self.beta


class ConeMinimum:
    """min over anchors a of h_a + lam * d_V(x, a); Lipschitz(lam) in d_V."""

    def __init__(self, anchors, heights, lam: float, V: ScalingMatrix, norm: Norm):
        self.anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
        self.heights = np.asarray(heights, dtype=float)
        self.lam = float(lam)
        self.V = V
        self.norm = norm

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        cones = [h + self.lam * scaled_distances_to(a, X, self.V, self.norm)
                 for a, h in zip(self.anchors, self.heights)]
        return np.min(np.vstack(cones), axis=0)


class Constant:
    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(X).shape[0], self.value)


@dataclass(frozen=True, eq=False)
class SyntheticSurface:
    """Control outcome surface f0 and effect tau, with f0 Lipschitz(lam) in (V, norm)."""
    f0: Callable[[np.ndarray], np.ndarray]
    tau: Callable[[np.ndarray], np.ndarray]
    lipschitz_constant: float
    scaling: ScalingMatrix
    norm: Norm
    description: str = ''

    def outcomes(self, X: np.ndarray, Z: np.ndarray, noise: Optional[np.ndarray] = None) -> np.ndarray:
        Y = self.f0(X) + np.asarray(Z) * self.tau(X)
        return Y if noise is None else Y + noise


def _euclidean_to_scaled(lam: float, V: ScalingMatrix, norm: Norm) -> float:
    """Convert a Euclidean Lipschitz constant to one in d_V."""
    pi = np.asarray(V.pi)
    if norm is Norm.L2:
        return lam * float(pi.max())
    return lam * float(np.sqrt(np.sum(pi * pi)))


def toy_surface(V: Optional[ScalingMatrix] = None, norm=Norm.L2, effect_scale: float = 1.0) -> SyntheticSurface:
    """Bivariate normal density at (0.5, 0.5), correlation 0.8, with effect 3 x1 + 3 x2."""
    V = V or ScalingMatrix((1.0, 1.0))
    norm = parse_norm(norm)
    mean = np.array([0.5, 0.5])
    cov = np.array([[1.0, 0.8], [0.8, 1.0]])
    # sup of the gradient norm: exp(-1/2) / (2 pi sqrt(det)) * sqrt(largest eigenvalue of cov^-1)
    euclidean = math.exp(-0.5) / (2 * math.pi * math.sqrt(np.linalg.det(cov))) \
        * math.sqrt(float(np.linalg.eigvalsh(np.linalg.inv(cov)).max()))
    return SyntheticSurface(
        f0=GaussianDensity(mean, cov),
        tau=LinearFunction([3.0 * effect_scale, 3.0 * effect_scale]),
        lipschitz_constant=_euclidean_to_scaled(euclidean, V, norm),
        scaling=V,
        norm=norm,
        description='toy',
    )


def linear_surface(beta, spec: CaliperSpec, intercept: float = 0.0, effect: float = 0.0) -> SyntheticSurface:
    """f0 = intercept + beta . x; the d_V Lipschitz constant is exact."""
    beta = np.asarray(beta, dtype=float)
    scaled = np.abs(beta * np.asarray(spec.pi))
    lam = float(np.sqrt(np.sum(scaled * scaled))) if spec.norm is Norm.L2 else float(np.sum(scaled))
    return SyntheticSurface(f0=LinearFunction(beta, intercept), tau=Constant(effect), lipschitz_constant=lam,
                            scaling=spec.scaling(), norm=spec.norm, description='linear')


def random_lipschitz_surface(rng: CounterRNG, lam: float, spec: CaliperSpec, n_anchors: int = 8,
                             effect: float = 0.0) -> SyntheticSurface:
    """Piecewise-linear surface from random cones over the unit cube."""
    anchors = rng.uniform(n_anchors * spec.p).reshape(n_anchors, spec.p)
    heights = rng.uniform(n_anchors)
    f0 = ConeMinimum(anchors, heights, lam, spec.scaling(), spec.norm)
    return SyntheticSurface(f0=f0, tau=Constant(effect), lipschitz_constant=float(lam),
                            scaling=spec.scaling(), norm=spec.norm, description='cones')


def gen_toy(cfg: ToyDGPConfig) -> Tuple[Dataset, float]:
    """One draw of the toy DGP and its true SATT.

    Treated draws come first in the stream, so every overlap level of the same
    (seed, trial) shares the same treated units.
    """
    rng = CounterRNG(cfg.seed, cfg.trial)
    surface = toy_surface(effect_scale=cfg.effect_scale)
    per_center, n_uniform = cfg.control_counts()

    n_t = cfg.n_treated_per_center
    Xt = np.repeat(np.array(TREATED_CENTERS), n_t, axis=0) + cfg.cluster_sd * rng.normal(4 * n_t).reshape(2 * n_t, 2)
    noise_t = cfg.noise_sd * rng.normal(2 * n_t)

    Xc_cluster = np.repeat(np.array(CONTROL_CENTERS), per_center, axis=0) \
        + cfg.cluster_sd * rng.normal(4 * per_center).reshape(2 * per_center, 2)
    Xc_uniform = rng.uniform(2 * n_uniform).reshape(n_uniform, 2)
    Xc = np.vstack([Xc_cluster, Xc_uniform])
    noise_c = cfg.noise_sd * rng.normal(Xc.shape[0])

    X = np.vstack([Xt, Xc])
    Z = np.concatenate([np.ones(Xt.shape[0], dtype=np.int8), np.zeros(Xc.shape[0], dtype=np.int8)])
    Y = surface.outcomes(X, Z, np.concatenate([noise_t, noise_c]))
    ids = [f"T{i:03d}" for i in range(1, Xt.shape[0] + 1)] + [f"C{j:03d}" for j in range(1, Xc.shape[0] + 1)]

    ds = Dataset(ids=tuple(ids), X=X, Z=Z, Y=Y, column_names=('x1', 'x2'))
    true_satt = math.fsum(surface.tau(Xt)) / Xt.shape[0]
    return ds, true_satt


def true_se(tau_hats, biases, true_satts) -> float:
    """Sample standard deviation of tau_hat - bias - tau across trials."""
    tau_hats, biases, true_satts = (np.asarray(v, dtype=float) for v in (tau_hats, biases, true_satts))
    if not (tau_hats.shape == biases.shape == true_satts.shape) or tau_hats.ndim != 1:
        raise LengthMismatch("tau_hats, biases and true_satts must be vectors of equal length")
    if tau_hats.shape[0] < 2:
        raise LengthMismatch("Need at least two trials for a standard deviation")
    return float(np.std(tau_hats - biases - true_satts, ddof=1))


@dataclass(frozen=True)
class EstimatorSettings:
    """Caliper and weighting choices applied to every simulated dataset."""
    policy: str = 'kbounded'
    norm: str = 'linf'
    c: float = 1.0
    alpha: float = 1.0
    k_min: int = 1
    k_max: int = 5
    bins: int = 5
    scheme: str = 'scm'
    level: float = 0.95
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    def caliper(self, ds: Dataset) -> CaliperSpec:
        return default_caliper(ds, self.bins).with_overrides(
            policy=self.policy, norm=self.norm, c=self.c, alpha=self.alpha, k_min=self.k_min, k_max=self.k_max)


@dataclass(frozen=True)
class TrialOutcome:
    level: str
    trial: int
    tau_hat: float
    se_hat: Optional[float]
    covered: bool
    ess_control: float
    true_satt: float
    bias: float
    max_excess_imbalance: float


def _coverage_trial(task) -> List[TrialOutcome]:
    base, levels, settings, trial = task
    outcomes = []
    for level in levels:
        cfg = replace(base, overlap_level=level, trial=trial)
        ds, true_satt = gen_toy(cfg)
        spec = settings.caliper(ds)
        mr = radius_match(ds, distance_matrix(ds, spec), spec)
        ws = assign_weights(mr, ds, spec, scheme=settings.scheme, tol=settings.tol, max_iter=settings.max_iter)
        est = estimate(ds, mr, ws, mr.matched_ids, level=settings.level, estimand="SATT")
        f0_values = toy_surface(effect_scale=cfg.effect_scale).f0(ds.X)
        # SCM imbalance should never exceed the nearest-neighbour distance
        excess = max(u.imbalance - mr.unit(u.treated_id).d_t for u in ws.units)
        outcomes.append(TrialOutcome(
            level=cfg.overlap_level.value,
            trial=trial,
            tau_hat=est.tau_hat,
            se_hat=est.se_hat,
            covered=est.covers(true_satt),
            ess_control=est.ess_control,
            true_satt=true_satt,
            bias=bias_term(ds, ws, mr.matched_ids, f0_values),
            max_excess_imbalance=float(excess),
        ))
    logging.debug(f"Coverage trial {trial} done")
    return outcomes


def _run_tasks(fn, tasks: Sequence, workers: int) -> List:
    """Map fn over tasks, in task order regardless of the worker count."""
    if workers <= 1:
        return [fn(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, tasks))


@dataclass(frozen=True)
class ScenarioSummary:
    scenario: str
    n_trials: int
    ess_control_avg: float
    se_hat_avg: Optional[float]
    se_true: float
    bias: float
    rmse: float
    coverage: Optional[float]
    mc_se_bias: float
    mc_se_rmse: float
    mc_se_coverage: Optional[float]
    n_se_unavailable: int


@dataclass(frozen=True)
class MonteCarloReport:
    scenarios: Tuple[ScenarioSummary, ...]
    master_seed: int
    settings: EstimatorSettings

    def rows(self) -> List[Dict[str, object]]:
        return [{k: ('' if v is None else v) for k, v in asdict(s).items()} for s in self.scenarios]


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def summarize_trials(scenario: str, outcomes: Sequence[TrialOutcome]) -> ScenarioSummary:
    n = len(outcomes)
    errors = np.array([o.tau_hat - o.true_satt for o in outcomes])
    bias = _mean(errors)
    mse = _mean(errors * errors)
    rmse = math.sqrt(mse)
    with_se = [o for o in outcomes if o.se_hat is not None]
    coverage = _mean(o.covered for o in with_se) if with_se else None
    return ScenarioSummary(
        scenario=scenario,
        n_trials=n,
        ess_control_avg=_mean(o.ess_control for o in outcomes),
        se_hat_avg=_mean(o.se_hat for o in with_se) if with_se else None,
        se_true=true_se([o.tau_hat for o in outcomes], [o.bias for o in outcomes], [o.true_satt for o in outcomes]),
        bias=bias,
        rmse=rmse,
        coverage=coverage,
        mc_se_bias=float(np.std(errors, ddof=1)) / math.sqrt(n),
        # delta method on sqrt(MSE)
        mc_se_rmse=float(np.std(errors * errors, ddof=1)) / (2.0 * rmse * math.sqrt(n)) if rmse > 0 else 0.0,
        mc_se_coverage=math.sqrt(coverage * (1.0 - coverage) / len(with_se)) if with_se else None,
        n_se_unavailable=n - len(with_se),
    )


def run_coverage_study(base: ToyDGPConfig = ToyDGPConfig(), levels: Sequence = tuple(OverlapLevel),
                       n_trials: int = 500, settings: EstimatorSettings = EstimatorSettings(),
                       master_seed: int = 20240101, workers: int = 1) -> MonteCarloReport:
    """Estimated versus actual standard error, bias, RMSE and coverage per overlap level."""
    if n_trials < 2:
        raise ConfigError(f"Coverage study needs at least two trials, got {n_trials}")
    levels = tuple(parse_overlap(level) for level in levels)
    base = replace(base, seed=master_seed)
    tasks = [(base, levels, settings, trial) for trial in range(n_trials)]
    logging.info(f"Coverage study: {n_trials} trials x {len(levels)} overlap levels, {workers} worker(s)")
    per_trial = _run_tasks(_coverage_trial, tasks, workers)

    scenarios = []
    for i, level in enumerate(levels):
        outcomes = [trial[i] for trial in per_trial]
        worst = max(o.max_excess_imbalance for o in outcomes)
        if worst > 1e-9:
            logging.warning(f"{level.value}: SCM imbalance exceeded the nearest-neighbour distance by {worst:.3g}")
        scenarios.append(summarize_trials(level.value, outcomes))
    return MonteCarloReport(scenarios=tuple(scenarios), master_seed=master_seed, settings=settings)


class Method(str, Enum):
    CSM = 'csm'
    UNIFORM_RADIUS = 'uniform_radius'
    ONE_NN = '1nn'
    CEM = 'cem'
    DIFF_MEANS = 'diff_means'


def _method_estimate(method: Method, ds: Dataset, settings: EstimatorSettings) -> Optional[float]:
    if method is Method.DIFF_MEANS:
        return difference_in_means(ds)
    if method is Method.CEM:
        mr = cem_match(ds, settings.bins)
        ws = assign_weights(mr, ds, mr.spec_used, scheme=WeightScheme.UNIFORM, warn_skipped=False)
        subset = mr.feasible_ids
    else:
        spec = settings.caliper(ds)
        D = distance_matrix(ds, spec)
        if method is Method.ONE_NN:
            mr = one_nn_match(ds, D, spec)
            scheme = WeightScheme.ONE_NN
        else:
            mr = radius_match(ds, D, spec)
            scheme = WeightScheme.SCM if method is Method.CSM else WeightScheme.UNIFORM
        ws = assign_weights(mr, ds, spec, scheme=scheme, tol=settings.tol, max_iter=settings.max_iter,
                            warn_skipped=False)
        subset = mr.matched_ids
    if not subset:
        return None
    return att_point_estimate(ds, ws, subset)


def _comparison_trial(task) -> List[Tuple[str, Optional[float], float]]:
    base, methods, settings, trial = task
    ds, true_satt = gen_toy(replace(base, trial=trial))
    return [(method.value, _method_estimate(method, ds, settings), true_satt) for method in methods]


@dataclass(frozen=True)
class MethodSummary:
    method: str
    n_trials: int
    rmse: Optional[float]
    abs_bias: Optional[float]
    mc_se_rmse: Optional[float]
    mc_se_bias: Optional[float]

    def to_row(self) -> Dict[str, object]:
        return {k: ('' if v is None else v) for k, v in asdict(self).items()}


def summarize_method(method: str, errors: np.ndarray) -> MethodSummary:
    """RMSE and |bias| of one method; unavailable with fewer than two estimates."""
    n = int(errors.size)
    if n < 2:
        logging.warning(f"{method}: fewer than two trials produced an estimate, summary unavailable")
        return MethodSummary(method=method, n_trials=n, rmse=None, abs_bias=None, mc_se_rmse=None, mc_se_bias=None)
    rmse = math.sqrt(_mean(errors * errors))
    return MethodSummary(
        method=method,
        n_trials=n,
        rmse=rmse,
        abs_bias=abs(_mean(errors)),
        mc_se_rmse=float(np.std(errors * errors, ddof=1)) / (2.0 * rmse * math.sqrt(n)) if rmse > 0 else 0.0,
        mc_se_bias=float(np.std(errors, ddof=1)) / math.sqrt(n),
    )


def run_method_comparison(base: ToyDGPConfig = ToyDGPConfig(), n_trials: int = 250,
                          methods: Sequence = tuple(Method), settings: EstimatorSettings = EstimatorSettings(),
                          master_seed: int = 20240101, workers: int = 1) -> List[MethodSummary]:
    """RMSE and absolute bias of each method's SATT estimate over repeated toy draws."""
    if n_trials < 2:
        raise ConfigError(f"Method comparison needs at least two trials, got {n_trials}")
    methods = tuple(Method(m) if not isinstance(m, Method) else m for m in methods)
    base = replace(base, seed=master_seed)
    tasks = [(base, methods, settings, trial) for trial in range(n_trials)]
    logging.info(f"Method comparison: {n_trials} trials, methods {', '.join(m.value for m in methods)}")
    per_trial = _run_tasks(_comparison_trial, tasks, workers)

    summaries = []
    for i, method in enumerate(methods):
        errors = np.array([t[i][1] - t[i][2] for t in per_trial if t[i][1] is not None], dtype=float)
        if 0 < errors.size < n_trials:
            logging.warning(f"{method.value}: {n_trials - errors.size} trials had no matched treated units")
        summaries.append(summarize_method(method.value, errors))
    return summaries
