"""End-to-end runs of the csm command line."""
import json

import numpy as np
import pytest

from calipersynth.cli import main
from calipersynth.data_model import Schema, load_dataset
from calipersynth.errors import SolverFailure
from calipersynth.output import read_table
from calipersynth.simulate import ToyDGPConfig, gen_toy


def write_units(path, treated, controls, y_treated, y_controls):
    lines = ['id,treatment,outcome,x1,x2']
    for i, (x, y) in enumerate(zip(treated, y_treated), start=1):
        lines.append(f"T{i},1,{y},{x[0]},{x[1]}")
    for j, (x, y) in enumerate(zip(controls, y_controls), start=1):
        lines.append(f"C{j},0,{y},{x[0]},{x[1]}")
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return str(path)


@pytest.fixture
def duplicates(clean_env):
    """Every treated unit has one exact copy among the controls; the effect is 2."""
    points = [(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]
    return write_units(clean_env / 'dup.csv', points, points, [3.0, 3.0, 3.0], [1.0, 1.0, 1.0])


@pytest.fixture
def disjoint(clean_env):
    return write_units(clean_env / 'far.csv', [(0.0, 0.0), (1.0, 1.0)], [(10.0, 0.0), (11.0, 1.0)],
                       [1.0, 1.0], [0.0, 0.0])


@pytest.fixture
def one_far(clean_env):
    """T1 sits among four controls; T2 is far from all of them and unmatched under the fixed caliper."""
    controls = [(0.1, 0.0), (0.0, 0.1), (-0.1, 0.0), (0.0, -0.1)]
    return write_units(clean_env / 'far_one.csv', [(0.0, 0.0), (10.0, 10.0)], controls, [2.0, 5.0], [0.0, 0.0, 1.0, 1.0])


def run(*argv):
    return main([str(a) for a in argv])


class TestMatch:
    def test_exact_duplicates(self, duplicates, clean_env):
        out = clean_env / 'out'
        assert run('match', '--input', duplicates, '--id', 'id', '--out', out) == 0
        table = read_table(str(out / 'match.csv'))
        assert list(table['treated_id']) == ['T1', 'T2', 'T3']
        assert list(table['control_id']) == ['C1', 'C2', 'C3']
        assert set(table['c_t']) == {'1.0'}
        assert set(table['feasible']) == {'true'}
        assert (out / 'match.csv').read_text(encoding='utf-8').startswith('# calipersynth ')

    def test_no_overlap(self, disjoint, clean_env):
        out = clean_env / 'out'
        assert run('match', '--input', disjoint, '--id', 'id', '--covariates', 'x1', '--out', out) == 0
        table = read_table(str(out / 'match.csv'))
        assert len(table) == 2
        assert set(table['feasible']) == {'false'}
        assert set(table['control_id']) == {''}

    @pytest.mark.parametrize('method', ['1nn', 'cem'])
    def test_comparator_methods(self, method, duplicates, clean_env):
        out = clean_env / method
        assert run('match', '--input', duplicates, '--id', 'id', '--method', method, '--out', out) == 0
        assert set(read_table(str(out / 'match.csv'))['method']) == {method}


class TestInputErrors:
    def test_missing_column(self, duplicates, clean_env):
        assert run('match', '--input', duplicates, '--treatment', 'treat', '--out', clean_env / 'out') == 2

    def test_missing_input(self, clean_env):
        assert run('match', '--input', clean_env / 'nope.csv', '--out', clean_env / 'out') == 2

    def test_caliper_sources_are_exclusive(self, duplicates, clean_env):
        with pytest.raises(SystemExit):
            run('match', '--input', duplicates, '--caliper-config', clean_env / 'c.yaml', '--auto-caliper', '4')

    def test_unknown_config_key(self, duplicates, clean_env):
        (clean_env / 'bad.json').write_text('{"widht": 3}', encoding='utf-8')
        assert run('match', '--input', duplicates, '--config', clean_env / 'bad.json',
                   '--out', clean_env / 'out') == 2

    def test_caliper_config_file(self, duplicates, clean_env):
        (clean_env / 'cal.yaml').write_text('pi.x1: 0.1\npi.x2: 0.1\nc: 2.0\n', encoding='utf-8')
        out = clean_env / 'out'
        assert run('match', '--input', duplicates, '--id', 'id', '--caliper-config', clean_env / 'cal.yaml',
                   '--out', out) == 0
        assert set(read_table(str(out / 'match.csv'))['c_t']) == {'2.0'}


class TestEstimate:
    def test_single_controls_have_no_standard_error(self, duplicates, clean_env):
        out = clean_env / 'out'
        assert run('estimate', '--input', duplicates, '--id', 'id', '--out', out, '--json') == 0
        row = read_table(str(out / 'estimate.csv')).iloc[0]
        assert float(row['tau_hat']) == 2.0
        assert row['se_hat'] == ''
        assert row['estimand'] == 'FSATT'
        mirror = json.loads((out / 'estimate.json').read_text(encoding='utf-8'))
        assert mirror['rows'][0]['se_hat'] is None
        assert mirror['rows'][0]['tau_hat'] == 2.0
        assert mirror['provenance'].startswith('calipersynth ')

    @pytest.mark.parametrize('subset, policy, label', [('feasible', 'fixed', 'FSATT'), ('all', 'fixed', 'FSATT'),
                                                       ('all', 'adaptive', 'SATT')])
    def test_subset_labels(self, subset, policy, label, one_far, clean_env):
        out = clean_env / f"{subset}-{policy}"
        assert run('estimate', '--input', one_far, '--id', 'id', '--subset', subset, '--policy', policy,
                   '--out', out) == 0
        assert read_table(str(out / 'estimate.csv')).iloc[0]['estimand'] == label

    def test_all_subset_with_unmatched_unit(self, one_far, clean_env):
        out = clean_env / 'out'
        assert run('estimate', '--input', one_far, '--id', 'id', '--subset', 'all', '--out', out) == 0
        row = read_table(str(out / 'estimate.csv')).iloc[0]
        assert row['estimand'] == 'FSATT'
        assert row['n_treated_used'] == '1'

    def test_solver_failure_exit_code(self, duplicates, clean_env, monkeypatch):
        def fail(*args, **kwargs):
            raise SolverFailure("simplex did not converge")

        monkeypatch.setattr('calipersynth.cli.assign_weights', fail)
        assert run('estimate', '--input', duplicates, '--id', 'id', '--out', clean_env / 'out') == 3

    def test_weights_table(self, duplicates, clean_env):
        out = clean_env / 'out'
        assert run('weight', '--input', duplicates, '--id', 'id', '--scheme', 'uniform', '--out', out) == 0
        table = read_table(str(out / 'weights.csv'))
        assert set(table['weight']) == {'1.0'}
        assert set(table['scheme']) == {'uniform'}


class TestDiagnose:
    def test_distances_are_reproducible(self, duplicates, clean_env):
        first, second = clean_env / 'a', clean_env / 'b'
        for out in (first, second):
            assert run('diagnose', 'distances', '--input', duplicates, '--id', 'id', '--k', '2', '--out', out) == 0
        for name in ('distances.csv', 'distance_quantiles.csv'):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    @pytest.mark.parametrize('which, table', [('balance', 'balance'), ('love', 'love'),
                                              ('frontier', 'frontier'), ('weights', 'weighting')])
    def test_tables_written(self, which, table, duplicates, clean_env):
        out = clean_env / which
        assert run('diagnose', which, '--input', duplicates, '--id', 'id', '--out', out) == 0
        assert len(read_table(str(out / f"{table}.csv"))) > 0

    def test_distance_matrix(self, duplicates, clean_env):
        out = clean_env / 'out'
        assert run('diagnose', 'distances', '--input', duplicates, '--id', 'id', '--k', '2', '--matrix',
                   '--out', out) == 0
        table = read_table(str(out / 'distance_matrix.csv'))
        assert list(table.columns) == ['treated_id', 'C1', 'C2', 'C3']
        assert list(table['treated_id']) == ['T1', 'T2', 'T3']
        assert [float(table.iloc[i][f"C{i + 1}"]) for i in range(3)] == [0.0, 0.0, 0.0]
        assert run('diagnose', 'distances', '--input', duplicates, '--id', 'id', '--k', '2',
                   '--out', clean_env / 'plain') == 0
        assert not (clean_env / 'plain' / 'distance_matrix.csv').exists()

    def test_love_adds_back_unmatched_unit(self, one_far, clean_env):
        out = clean_env / 'out'
        assert run('diagnose', 'love', '--input', one_far, '--id', 'id', '--out', out) == 0
        table = read_table(str(out / 'love.csv'))
        assert sorted(set(table['step'])) == ['0', '1']
        assert set(table[table['step'] == '1']['added_id']) == {'T2'}

    def test_frontier_adds_back_unmatched_unit(self, one_far, clean_env):
        out = clean_env / 'out'
        assert run('diagnose', 'frontier', '--input', one_far, '--id', 'id', '--out', out) == 0
        table = read_table(str(out / 'frontier.csv'))
        assert list(table['added_id']) == ['', 'T2']
        assert list(table['n_treated_used']) == ['1', '2']
        assert list(table['estimand']) == ['FSATT', 'SATT']

    @pytest.mark.parametrize('which', ['love', 'frontier'])
    def test_nested_series_need_adaptive_policy(self, which, one_far, clean_env):
        assert run('diagnose', which, '--input', one_far, '--id', 'id', '--policy', 'fixed',
                   '--out', clean_env / 'out') == 2

    def test_too_few_controls_for_k(self, duplicates, clean_env):
        assert run('diagnose', 'distances', '--input', duplicates, '--id', 'id', '--k', '4', '--out', clean_env / 'out') == 2


class TestSimulate:
    def test_toy_dataset(self, clean_env):
        out = clean_env / 'out'
        assert run('simulate', 'toy', '--seed', '3', '--out', out) == 0
        ds = load_dataset(str(out / 'toy.csv'), Schema(treatment='treatment', outcome='outcome', id_column='id'))
        expected, truth = gen_toy(ToyDGPConfig(seed=3))
        assert ds.ids == expected.ids
        assert np.array_equal(ds.X, expected.X)
        assert np.array_equal(ds.Y, expected.Y)
        assert float(read_table(str(out / 'toy_truth.csv')).iloc[0]['true_satt']) == truth

    def test_coverage_table(self, clean_env):
        (clean_env / 'csm.json').write_text('{"trials_coverage": 2}', encoding='utf-8')
        out = clean_env / 'out'
        assert run('simulate', 'coverage', '--seed', '1', '--out', out) == 0
        table = read_table(str(out / 'coverage.csv'))
        assert list(table['scenario']) == ['very_low', 'low', 'medium', 'high', 'very_high']
        assert set(table['n_trials']) == {'2'}


class TestReruns:
    @pytest.mark.parametrize('argv, table', [
        (['match'], 'match'),
        (['estimate', '--policy', 'adaptive', '--subset', 'all'], 'estimate'),
        (['diagnose', 'love'], 'love'),
        (['diagnose', 'frontier'], 'frontier'),
    ])
    def test_outputs_are_byte_identical(self, argv, table, one_far, clean_env):
        first, second = clean_env / 'a', clean_env / 'b'
        for out in (first, second):
            assert run(*argv, '--input', one_far, '--id', 'id', '--json', '--out', out) == 0
        for name in (f"{table}.csv", f"{table}.json"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_comparison_ignores_worker_count(self, clean_env):
        serial, parallel = clean_env / 'serial', clean_env / 'parallel'
        assert run('simulate', 'compare', '--trials', '2', '--seed', '4', '--workers', '1', '--out', serial) == 0
        assert run('simulate', 'compare', '--trials', '2', '--seed', '4', '--workers', '2', '--out', parallel) == 0
        assert (serial / 'compare.csv').read_bytes() == (parallel / 'compare.csv').read_bytes()
