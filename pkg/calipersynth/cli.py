"""Command line: csm match | weight | estimate | diagnose | simulate."""
import os
import sys
import logging
import argparse
from dataclasses import asdict, replace
from typing import Any, Dict, List, Optional, Tuple

from rich.console import Console
from rich.logging import RichHandler

from . import __version__
from .config import get_setting, load_config
from .data_model import CaliperSpec, Dataset, Policy, Schema, default_caliper, load_caliper_spec, load_dataset, save_dataset
from .diagnostics import (
    balance_report,
    frontier_rows,
    frontier_series,
    histogram_rows,
    love_plot_series,
    quantile_rows,
    topk_distance_histogram,
    weighting_comparison,
)
from .distance import distance_matrix
from .errors import CSMError, ConfigError, InvalidCaliperSpec
from .estimator import estimand_label, estimate
from .matcher import MatchMethod, MatchResult, cem_match, describe, one_nn_match, radius_match, select_subset
from .output import TableWriter, print_summary, print_table
from .scm_solver import WeightSet, assign_weights
from .simulate import EstimatorSettings, Method, OverlapLevel, ToyDGPConfig, gen_toy, run_coverage_study, run_method_comparison

console = Console()
error_console = Console(stderr=True)

EXIT_OK = 0

MATCH_COLUMNS = ['treated_id', 'control_id', 'distance', 'c_t', 'feasible', 'method']
WEIGHT_COLUMNS = ['treated_id', 'control_id', 'weight', 'scheme', 'imbalance']
ESTIMATE_COLUMNS = ['estimand', 'tau_hat', 'se_hat', 'ci_lo', 'ci_hi', 'level', 'ess_control', 'ess_treated',
                    'n_treated_used', 'n_clusters_used', 's2']
BALANCE_COLUMNS = ['covariate', 'treated_mean', 'control_mean', 'abs_diff', 'bound', 'within_bound']


def _data_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group('data')
    group.add_argument('--input', required=True, help='CSV file with one row per unit')
    group.add_argument('--treatment', default='treatment', help='Treatment column (0/1)')
    group.add_argument('--outcome', default='outcome', help='Outcome column')
    group.add_argument('--covariates', help='Comma-separated covariate columns (default: all others)')
    group.add_argument('--id', dest='id_column', help='Unit id column (default: row number)')

    caliper = parser.add_argument_group('caliper')
    source = caliper.add_mutually_exclusive_group()
    source.add_argument('--caliper-config', help='Flat key-value caliper file (pi.<column>, c, alpha, ...)')
    source.add_argument('--auto-caliper', type=int, metavar='BINS', help='Calipers from equal-width bins')
    caliper.add_argument('--norm', choices=['l2', 'linf'])
    caliper.add_argument('--policy', choices=['fixed', 'adaptive', 'kbounded'])
    caliper.add_argument('--alpha', type=float)
    caliper.add_argument('--c', type=float)
    caliper.add_argument('--kmin', type=int)
    caliper.add_argument('--kmax', type=int)
    return parser


def _weight_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument('--scheme', choices=['scm', 'uniform', '1nn'])
    parser.add_argument('--subset', help='feasible, all or max-caliper:<x>')
    parser.add_argument('--level', type=float, help='Confidence level')
    return parser


def _run_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group('run')
    group.add_argument('--out', help='Output directory')
    group.add_argument('--json', action='store_true', help='Also write JSON mirrors of every table')
    group.add_argument('--config', help='JSON configuration file')
    group.add_argument('--log-level', help='DEBUG, INFO, WARNING or ERROR')
    return parser


def build_parser() -> argparse.ArgumentParser:
    data, weights, run = _data_parser(), _weight_parser(), _run_parser()
    parser = argparse.ArgumentParser(prog='csm', description='Caliper synthetic matching for treatment effects')
    parser.add_argument('--version', action='version', version=f"calipersynth {__version__}")
    commands = parser.add_subparsers(dest='command', required=True)

    match = commands.add_parser('match', parents=[data, run], help='Radius, 1-NN or CEM matching')
    match.add_argument('--method', choices=[m.value for m in MatchMethod], default=MatchMethod.RADIUS.value)
    match.set_defaults(func=cmd_match)

    weight = commands.add_parser('weight', parents=[data, weights, run], help='Weights inside matched sets')
    weight.set_defaults(func=cmd_weight)

    est = commands.add_parser('estimate', parents=[data, weights, run], help='SATT / FSATT with plug-in SE')
    est.set_defaults(func=cmd_estimate)

    diagnose = commands.add_parser('diagnose', help='Balance and caliper diagnostics')
    which = diagnose.add_subparsers(dest='which', required=True)
    for name, helptext in (('balance', 'Marginal and joint balance'),
                           ('love', 'Balance over nested treated subsets'),
                           ('frontier', 'Estimates over nested treated subsets'),
                           ('weights', 'SCM vs uniform vs 1-NN weighting')):
        sub = which.add_parser(name, parents=[data, weights, run], help=helptext)
        sub.set_defaults(func=cmd_diagnose)
    distances = which.add_parser('distances', parents=[data, run], help='Histograms of the k closest distances')
    distances.add_argument('--k', type=int)
    distances.add_argument('--bins', type=int, help='Histogram bins')
    distances.add_argument('--matrix', action='store_true', help='Also write the treated x control distance matrix')
    distances.set_defaults(func=cmd_diagnose)

    simulate = commands.add_parser('simulate', help='Toy data and Monte Carlo studies')
    kind = simulate.add_subparsers(dest='kind', required=True)
    for name, helptext in (('coverage', 'Estimated vs actual SE and coverage per overlap level'),
                           ('compare', 'RMSE and bias of competing methods')):
        sub = kind.add_parser(name, parents=[run], help=helptext)
        sub.add_argument('--trials', type=int)
        sub.add_argument('--seed', type=int)
        sub.add_argument('--workers', type=int)
        sub.add_argument('--norm', choices=['l2', 'linf'])
        sub.add_argument('--policy', choices=['fixed', 'adaptive', 'kbounded'])
        sub.add_argument('--c', type=float)
        sub.add_argument('--kmin', type=int)
        sub.add_argument('--kmax', type=int)
        sub.add_argument('--level', type=float)
        sub.set_defaults(func=cmd_simulate)
    sub = kind.add_parser('toy', parents=[run], help='Write one toy dataset')
    sub.add_argument('--seed', type=int)
    sub.add_argument('--trial', type=int, default=0)
    sub.add_argument('--overlap', choices=[level.value for level in OverlapLevel])
    sub.add_argument('--noise-sd', type=float, default=0.5)
    sub.set_defaults(func=cmd_simulate)
    return parser


def _setting(args: argparse.Namespace, config: Dict[str, Any], attr: str, key: Optional[str] = None) -> Any:
    value = getattr(args, attr, None)
    return value if value is not None else get_setting(config, key or attr)


def _run_config(args: argparse.Namespace, config: Dict[str, Any], **resolved) -> Dict[str, Any]:
    """Everything that determines output content; paths, workers and verbosity excluded."""
    skip = {'func', 'out', 'json', 'config', 'log_level', 'workers', 'input'}
    flags = {k: v for k, v in vars(args).items() if k not in skip}
    if getattr(args, 'input', None):
        flags['input'] = os.path.basename(args.input)
    return {'flags': flags, 'config': {k: v for k, v in config.items() if k not in ('workers', 'log_level', 'out_dir')},
            **resolved}


def _load(args: argparse.Namespace) -> Dataset:
    if not os.path.isfile(args.input):
        raise ConfigError(f"Input file not found: {args.input}")
    covariates = [c.strip() for c in args.covariates.split(',') if c.strip()] if args.covariates else None
    return load_dataset(args.input, Schema(treatment=args.treatment, outcome=args.outcome,
                                           covariates=covariates, id_column=args.id_column))


def _caliper(args: argparse.Namespace, config: Dict[str, Any], ds: Dataset) -> CaliperSpec:
    if args.caliper_config:
        if not os.path.isfile(args.caliper_config):
            raise ConfigError(f"Caliper config not found: {args.caliper_config}")
        spec = load_caliper_spec(args.caliper_config, ds.column_names)
    else:
        bins = args.auto_caliper if args.auto_caliper is not None else get_setting(config, 'bins')
        spec = default_caliper(ds, bins, get_setting(config, 'binary_pi')).with_overrides(
            c=get_setting(config, 'c'), alpha=get_setting(config, 'alpha'), policy=get_setting(config, 'policy'),
            norm=get_setting(config, 'norm'), k_min=get_setting(config, 'k_min'), k_max=get_setting(config, 'k_max'))
    return spec.with_overrides(c=args.c, alpha=args.alpha, policy=args.policy, norm=args.norm,
                               k_min=args.kmin, k_max=args.kmax)


def _match(args: argparse.Namespace, config: Dict[str, Any], ds: Dataset, spec: CaliperSpec,
           method: str = 'radius') -> MatchResult:
    method = MatchMethod(method)
    if method is MatchMethod.CEM:
        return cem_match(ds, args.auto_caliper or get_setting(config, 'bins'))
    D = distance_matrix(ds, spec)
    if method is MatchMethod.ONE_NN:
        return one_nn_match(ds, D, spec)
    return radius_match(ds, D, spec)


def _weights(args, config, ds, spec, mr) -> WeightSet:
    return assign_weights(mr, ds, spec, scheme=_setting(args, config, 'scheme'),
                          tol=get_setting(config, 'tol'), max_iter=get_setting(config, 'max_iter'))


def _writer(args, config, **resolved) -> TableWriter:
    return TableWriter(args.out or get_setting(config, 'out_dir'), _run_config(args, config, **resolved),
                       json_mirror=args.json)


def _report(paths: List[str]):
    for path in paths:
        console.print(f"✅ Wrote {path}")


def cmd_match(args, config) -> int:
    ds = _load(args)
    spec = _caliper(args, config, ds)
    mr = _match(args, config, ds, spec, args.method)
    writer = _writer(args, config, caliper=spec.to_dict())
    _report(writer.write('match', mr.rows(), MATCH_COLUMNS))

    summary = describe(mr)
    values = {k: summary[k] for k in ('n_treated', 'n_feasible', 'pct_feasible', 'n_pairs')}
    values.update({f"c_t q{q}": v for q, v in summary['c_t_quantiles'].items()})
    print_summary(console, f"Match ({mr.method.value}, {spec.policy.value}, {spec.norm.value})", values)
    if mr.infeasible_ids:
        console.print(f"⚠️ {len(mr.infeasible_ids)} treated units beyond c={spec.c}: {', '.join(mr.infeasible_ids)}")
    return EXIT_OK


def cmd_weight(args, config) -> int:
    ds = _load(args)
    spec = _caliper(args, config, ds)
    mr = _match(args, config, ds, spec)
    ws = _weights(args, config, ds, spec, mr)
    writer = _writer(args, config, caliper=spec.to_dict())
    _report(writer.write('weights', ws.rows(), WEIGHT_COLUMNS))
    return EXIT_OK


def _subset(args, config, mr: MatchResult) -> Tuple[Tuple[str, ...], str]:
    subset = select_subset(mr, _setting(args, config, 'subset'))
    return subset, estimand_label(mr, subset)


def cmd_estimate(args, config) -> int:
    ds = _load(args)
    spec = _caliper(args, config, ds)
    mr = _match(args, config, ds, spec)
    ws = _weights(args, config, ds, spec, mr)
    subset, label = _subset(args, config, mr)
    est = estimate(ds, mr, ws, subset, level=_setting(args, config, 'level'), estimand=label)

    row = est.to_dict()
    writer = _writer(args, config, caliper=spec.to_dict())
    _report(writer.write('estimate', [row], ESTIMATE_COLUMNS))
    print_summary(console, f"{est.estimand} ({ws.scheme.value} weights)",
                  {k: row[k] for k in ('tau_hat', 'se_hat', 'ci_lo', 'ci_hi', 'ess_control', 'n_treated_used')})
    if not est.se_available:
        console.print("⚠️ Standard error unavailable: no matched set has two or more controls")
    return EXIT_OK


def _nested_caliper(args, spec: CaliperSpec) -> CaliperSpec:
    """love and frontier add every treated unit back, so each needs a matched set."""
    if spec.policy is Policy.ADAPTIVE:
        return spec
    if args.policy is not None:
        raise InvalidCaliperSpec(f"diagnose {args.which} needs --policy adaptive, got {args.policy}")
    logging.info(f"diagnose {args.which}: using the adaptive policy instead of {spec.policy.value}")
    return spec.with_overrides(policy=Policy.ADAPTIVE)


def cmd_diagnose(args, config) -> int:
    ds = _load(args)
    spec = _caliper(args, config, ds)
    if args.which in ('love', 'frontier'):
        spec = _nested_caliper(args, spec)
    writer = _writer(args, config, caliper=spec.to_dict())

    if args.which == 'distances':
        k = _setting(args, config, 'k', 'top_k')
        D = distance_matrix(ds, spec)
        if args.matrix:
            frame = D.to_frame().rename_axis('treated_id').reset_index()
            _report(writer.write('distance_matrix', frame.to_dict('records'), list(frame.columns)))
        histograms = topk_distance_histogram(D, k, _setting(args, config, 'bins', 'histogram_bins'))
        _report(writer.write('distances', histogram_rows(histograms)))
        quantiles = quantile_rows(histograms)
        _report(writer.write('distance_quantiles', quantiles))
        print_table(console, f"Closest {k} distances ({spec.norm.value})", quantiles)
        return EXIT_OK

    mr = _match(args, config, ds, spec)
    if args.which == 'weights':
        rows = [asdict(s) for s in weighting_comparison(ds, mr, spec, tol=get_setting(config, 'tol'),
                                                      max_iter=get_setting(config, 'max_iter'))]
        _report(writer.write('weighting', rows))
        print_table(console, "Weighting schemes on the same matched sets", rows)
        return EXIT_OK

    ws = _weights(args, config, ds, spec, mr)
    if args.which == 'balance':
        subset, label = _subset(args, config, mr)
        report = balance_report(ds, ws, subset, spec)
        rows = report.rows()
        _report(writer.write('balance', rows, BALANCE_COLUMNS))
        print_table(console, f"Balance over {label} ({report.n_treated_used} treated)", rows, BALANCE_COLUMNS)
    elif args.which == 'love':
        rows = love_plot_series(ds, mr, ws, spec)
        _report(writer.write('love', rows))
        console.print(f"📊 {rows[-1]['step'] + 1 if rows else 0} nested subsets")
    else:
        points = frontier_series(ds, mr, ws, spec, level=_setting(args, config, 'level'))
        rows = frontier_rows(points)
        _report(writer.write('frontier', rows))
        print_table(console, "Estimate-estimand frontier", rows,
                    ['step', 'added_id', 'max_c_t', 'tau_hat', 'se_hat', 'n_treated_used', 'estimand'])
    return EXIT_OK


def _settings(args, config) -> EstimatorSettings:
    base = EstimatorSettings(tol=get_setting(config, 'tol'), max_iter=get_setting(config, 'max_iter'),
                             bins=get_setting(config, 'bins'))
    overrides = {'policy': args.policy, 'norm': args.norm, 'c': args.c, 'k_min': args.kmin, 'k_max': args.kmax,
                 'level': args.level}
    return replace(base, **{k: v for k, v in overrides.items() if v is not None})


def cmd_simulate(args, config) -> int:
    seed = _setting(args, config, 'seed')
    base = ToyDGPConfig(overlap_fractions=dict(get_setting(config, 'overlap_fractions')))
    writer = _writer(args, config)

    if args.kind == 'toy':
        cfg = ToyDGPConfig(noise_sd=args.noise_sd, overlap_level=args.overlap,
                           overlap_fractions=base.overlap_fractions, seed=seed, trial=args.trial)
        ds, true_satt = gen_toy(cfg)
        path = save_dataset(ds, os.path.join(writer.out_dir, 'toy.csv'))
        _report([path])
        _report(writer.write('toy_truth', [{'true_satt': true_satt, 'n_treated': ds.n_treated,
                                            'n_control': ds.n_control, 'seed': seed, 'trial': args.trial}]))
        return EXIT_OK

    workers = _setting(args, config, 'workers')
    settings = _settings(args, config)
    if args.kind == 'coverage':
        trials = _setting(args, config, 'trials', 'trials_coverage')
        report = run_coverage_study(base, tuple(OverlapLevel), trials, settings, seed, workers)
        rows = report.rows()
        _report(writer.write('coverage', rows))
        print_table(console, f"Coverage study ({trials} trials, seed {seed})", rows,
                    ['scenario', 'ess_control_avg', 'se_hat_avg', 'se_true', 'bias', 'rmse', 'coverage'])
    else:
        trials = _setting(args, config, 'trials', 'trials_compare')
        summaries = run_method_comparison(base, trials, tuple(Method), settings, seed, workers)
        rows = [s.to_row() for s in summaries]
        _report(writer.write('compare', rows))
        print_table(console, f"Method comparison ({trials} trials, seed {seed})", rows)
    return EXIT_OK


def _configure_logging(level: str):
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.WARNING),
        format="%(message)s",
        handlers=[RichHandler(console=error_console, show_time=False, show_path=False)],
        force=True,
    )


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        _configure_logging(args.log_level or get_setting(config, 'log_level'))
        return args.func(args, config)
    except CSMError as e:
        error_console.print(f"❌ {e}")
        return e.exit_code
    except KeyboardInterrupt:
        error_console.print("\n👋 Interrupted")
        return 130
    except Exception as e:
        logging.error(f"Unexpected error: {e}", exc_info=True)
        return 1


if __name__ == '__main__':
    sys.exit(main())
