"""Tests for the synthetic-control weight solvers and weight assignment."""
import logging
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from calipersynth.data_model import CaliperSpec, Norm, Policy, ScalingMatrix
from calipersynth.distance import distance_matrix, scaled_distance
from calipersynth.errors import ConfigError, DimensionMismatch
from calipersynth.matcher import radius_match
from calipersynth.scm_solver import (
    WeightScheme,
    assign_weights,
    parse_scheme,
    scm_weights_l2,
    scm_weights_linf,
)
from calipersynth.simulate import EstimatorSettings, ToyDGPConfig, gen_toy

SOLVERS = {Norm.LINF: scm_weights_linf, Norm.L2: scm_weights_l2}


def simplex_grid(m, step):
    """Every weight vector on the simplex with coordinates on a grid of the given step."""
    n = int(round(1 / step))
    if m == 2:
        a = np.arange(n + 1)
        return np.stack([a, n - a], axis=1) / n
    points = [(i, j, n - i - j) for i in range(n + 1) for j in range(n + 1 - i)]
    return np.array(points, dtype=float) / n


def objective(x_t, Xc, V, norm, W):
    gaps = (W @ Xc - x_t) / np.asarray(V.pi)
    if norm is Norm.LINF:
        return np.abs(gaps).max(axis=1)
    return np.sqrt((gaps * gaps).sum(axis=1))


def assert_on_simplex(w):
    assert np.all(w >= 0.0)
    assert abs(math.fsum(w) - 1.0) <= 1e-12


class TestLinfWeights:
    def test_midpoint(self):
        w, imbalance = scm_weights_linf([0.5], [[0.0], [1.0]], ScalingMatrix((1.0,)))
        assert w == pytest.approx([0.5, 0.5], abs=1e-12)
        assert imbalance == pytest.approx(0.0, abs=1e-12)

    def test_point_on_hull_edge(self):
        w, imbalance = scm_weights_linf([0.5, 0.5], [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], ScalingMatrix((1.0, 1.0)))
        assert imbalance == pytest.approx(0.0, abs=1e-9)
        assert w == pytest.approx([0.0, 0.5, 0.5], abs=1e-9)

    def test_single_control(self):
        w, imbalance = scm_weights_linf([0.0, 0.0], [[3.0, 1.0]], ScalingMatrix((1.0, 2.0)))
        assert list(w) == [1.0]
        assert imbalance == 3.0

    def test_agrees_with_scipy(self, rng):
        for _ in range(40):
            p, m = int(rng.integers(1, 4)), 4
            V = ScalingMatrix(tuple(rng.uniform(0.2, 2.0, size=p)))
            x_t = rng.normal(size=p)
            Xc = rng.normal(size=(m, p))
            _, imbalance = scm_weights_linf(x_t, Xc, V)
            G = ((Xc - x_t) / np.asarray(V.pi)).T
            A_ub = np.vstack([np.hstack([G, -np.ones((p, 1))]), np.hstack([-G, -np.ones((p, 1))])])
            reference = linprog(np.r_[np.zeros(m), 1.0], A_ub=A_ub, b_ub=np.zeros(2 * p),
                                A_eq=np.r_[np.ones(m), 0.0][None, :], b_eq=[1.0], bounds=(0, None), method='highs')
            assert imbalance == pytest.approx(reference.fun, abs=1e-7)


class TestL2Weights:
    def test_nearest_vertex_outside_hull(self):
        w, imbalance = scm_weights_l2([2.0], [[0.0], [1.0]], ScalingMatrix((1.0,)))
        assert list(w) == [0.0, 1.0]
        assert imbalance == 1.0

    def test_projection_onto_segment(self):
        w, imbalance = scm_weights_l2([1.0, 1.0], [[0.0, 0.0], [2.0, 0.0]], ScalingMatrix((1.0, 1.0)))
        assert w == pytest.approx([0.5, 0.5], abs=1e-12)
        assert imbalance == pytest.approx(1.0)

    def test_frank_wolfe_gap_closes(self, rng):
        for _ in range(40):
            p, m = int(rng.integers(2, 5)), int(rng.integers(4, 12))
            V = ScalingMatrix(tuple(rng.uniform(0.2, 2.0, size=p)))
            x_t = rng.normal(size=p)
            Xc = rng.normal(size=(m, p))
            w, _ = scm_weights_l2(x_t, Xc, V)
            P = (Xc - x_t) / np.asarray(V.pi)
            u = w @ P
            # optimality of the projection: no vertex improves along its direction
            assert float(u @ u) - float((P @ u).min()) <= 1e-6


class TestBruteForce:
    @pytest.mark.parametrize('norm', [Norm.LINF, Norm.L2])
    @pytest.mark.parametrize('m', [2, 3])
    @pytest.mark.parametrize('trials', [15, pytest.param(125, marks=pytest.mark.slow)])
    def test_never_worse_than_grid(self, norm, m, trials, rng):
        step = 1e-3
        W = simplex_grid(m, step)
        for _ in range(trials):
            p = int(rng.integers(1, 4))
            V = ScalingMatrix(tuple(rng.uniform(0.2, 2.0, size=p)))
            x_t = rng.uniform(size=p)
            Xc = rng.uniform(size=(m, p))
            w, imbalance = SOLVERS[norm](x_t, Xc, V)
            assert_on_simplex(w)
            grid = objective(x_t, Xc, V, norm, W)
            assert imbalance <= grid.min() + 1e-9
            assert imbalance >= grid.min() - 2e-3 * (1.0 + grid.max())


class TestSafeguards:
    @pytest.mark.parametrize('norm', [Norm.LINF, Norm.L2])
    def test_no_worse_than_uniform_or_nearest(self, norm, rng):
        for _ in range(100):
            p, m = int(rng.integers(1, 5)), int(rng.integers(1, 9))
            V = ScalingMatrix(tuple(rng.uniform(0.1, 2.0, size=p)))
            x_t = rng.normal(size=p)
            Xc = rng.normal(size=(m, p))
            w, imbalance = SOLVERS[norm](x_t, Xc, V)
            assert_on_simplex(w)
            assert imbalance == scaled_distance(x_t, w @ Xc, V, norm)
            uniform = scaled_distance(x_t, Xc.mean(axis=0), V, norm)
            nearest = min(scaled_distance(x_t, x, V, norm) for x in Xc)
            assert imbalance <= uniform + 1e-12
            assert imbalance <= nearest + 1e-12

    @pytest.mark.parametrize('norm', [Norm.LINF, Norm.L2])
    def test_removes_linear_bias_inside_hull(self, norm, rng):
        for _ in range(30):
            Xc = rng.uniform(size=(12, 2))
            x_t = rng.dirichlet(np.ones(12)) @ Xc
            beta = rng.normal(size=2)
            w, _ = SOLVERS[norm](x_t, Xc, ScalingMatrix((1.0, 1.0)))
            assert abs(float(beta @ x_t) - float(w @ (Xc @ beta))) <= 1e-6

    def test_input_checks(self):
        V = ScalingMatrix((1.0,))
        with pytest.raises(DimensionMismatch):
            scm_weights_l2([0.0, 1.0], [[0.0], [1.0]], V)
        with pytest.raises(DimensionMismatch):
            scm_weights_linf([0.0], np.zeros((0, 1)), V)


class TestAssignWeights:
    def test_schemes(self, make_dataset):
        ds = make_dataset([0.0], [-1.0, 1.0, 3.0])
        spec = CaliperSpec(columns=('x1',), pi=(1.0,), c=3.0)
        mr = radius_match(ds, distance_matrix(ds, spec), spec)

        uniform = assign_weights(mr, ds, spec, scheme='uniform').unit('t1')
        assert uniform.weights == pytest.approx([1 / 3, 1 / 3, 1 / 3])

        nearest = assign_weights(mr, ds, spec, scheme=WeightScheme.ONE_NN).unit('t1')
        assert nearest.control_ids[:2] == ('c1', 'c2')
        assert list(nearest.weights) == [0.5, 0.5, 0.0]
        assert nearest.imbalance == 0.0

        scm = assign_weights(mr, ds, spec).unit('t1')
        assert scm.imbalance == pytest.approx(0.0, abs=1e-12)
        assert_on_simplex(scm.weights)

    def test_units_without_matches_are_skipped(self, make_dataset):
        ds = make_dataset([0.0, 5.0], [1.5, 5.5])
        spec = CaliperSpec(columns=('x1',), pi=(1.0,), c=1.0, policy=Policy.FIXED)
        ws = assign_weights(radius_match(ds, distance_matrix(ds, spec), spec), ds, spec)
        assert ws.skipped == ('t1',)
        assert ws.treated_ids == ('t2',)
        assert not ws.has('t1')

    def test_skipped_units_log_level(self, make_dataset, caplog):
        ds = make_dataset([0.0, 5.0], [1.5, 5.5])
        spec = CaliperSpec(columns=('x1',), pi=(1.0,), c=1.0, policy=Policy.FIXED)
        mr = radius_match(ds, distance_matrix(ds, spec), spec)
        caplog.clear()
        with caplog.at_level(logging.DEBUG):
            assign_weights(mr, ds, spec, warn_skipped=False)
        assert [r.levelno for r in caplog.records if 'get no weights' in r.getMessage()] == [logging.DEBUG]
        caplog.clear()
        with caplog.at_level(logging.DEBUG):
            assign_weights(mr, ds, spec)
        assert [r.levelno for r in caplog.records if 'get no weights' in r.getMessage()] == [logging.WARNING]

    def test_control_totals_and_rows(self, make_dataset):
        ds = make_dataset([0.0, 0.2], [0.1, 0.5])
        spec = CaliperSpec(columns=('x1',), pi=(1.0,), c=1.0)
        ws = assign_weights(radius_match(ds, distance_matrix(ds, spec), spec), ds, spec, scheme='uniform')
        totals = ws.control_totals(('t1', 't2'))
        assert totals == {2: pytest.approx(1.0), 3: pytest.approx(1.0)}
        assert len(ws.rows()) == 4

    def test_parse_scheme(self):
        assert parse_scheme('1NN') is WeightScheme.ONE_NN
        with pytest.raises(ConfigError):
            parse_scheme('kernel')

    @pytest.mark.parametrize('norm', [Norm.LINF, Norm.L2])
    def test_scm_beats_other_schemes_on_random_data(self, norm, make_dataset, rng):
        ds = make_dataset(rng.uniform(size=(15, 3)), rng.uniform(size=(60, 3)))
        spec = CaliperSpec(columns=ds.column_names, pi=(0.2, 0.2, 0.2), norm=norm, policy='adaptive')
        mr = radius_match(ds, distance_matrix(ds, spec), spec)
        schemes = {s: assign_weights(mr, ds, spec, scheme=s) for s in WeightScheme}
        for treated_id in mr.treated_ids:
            scm = schemes[WeightScheme.SCM].unit(treated_id).imbalance
            assert scm <= schemes[WeightScheme.UNIFORM].unit(treated_id).imbalance + 1e-12
            assert scm <= schemes[WeightScheme.ONE_NN].unit(treated_id).imbalance + 1e-9
            assert scm <= mr.unit(treated_id).d_t + 1e-12



class TestToyInstances:
    def test_roundoff_in_phase_one_is_not_unbounded(self):
        # unit whose LP once stopped phase 1 on a -3e-11 reduced cost
        ds, _ = gen_toy(ToyDGPConfig(seed=7, trial=45, overlap_level='medium'))
        spec = EstimatorSettings().caliper(ds)
        u = radius_match(ds, distance_matrix(ds, spec), spec).unit('T055')
        x_t = ds.X[u.treated_index]
        assert list(x_t) == pytest.approx([0.8700011073577965, 0.7444755228531934], rel=1e-12)
        assert list(spec.pi) == pytest.approx([0.2075993909398796, 0.21462968184701156], rel=1e-12)
        assert u.size == 5
        w, imbalance = scm_weights_linf(x_t, ds.X[u.control_index], spec.scaling())
        assert_on_simplex(w)
        assert imbalance == pytest.approx(0.0, abs=1e-9)
