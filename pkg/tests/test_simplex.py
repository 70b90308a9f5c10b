"""Tests for the dense simplex solver."""
import numpy as np
import pytest
from scipy.optimize import linprog

from calipersynth.errors import SolverFailure
from calipersynth.simplex import _iterate, solve_lp


class TestSolveLP:
    def test_inequality_example(self):
        # max x + y  s.t.  x + 2y <= 4,  3x + y <= 6
        result = solve_lp([-1.0, -1.0], A_ub=[[1.0, 2.0], [3.0, 1.0]], b_ub=[4.0, 6.0])
        assert result.objective == pytest.approx(-2.8)
        assert result.x == pytest.approx([1.6, 1.2])

    def test_equality_constraints(self):
        # min 2a + b + 3c  s.t.  a + b + c = 1,  a - c = 0
        result = solve_lp([2.0, 1.0, 3.0], A_eq=[[1.0, 1.0, 1.0], [1.0, 0.0, -1.0]], b_eq=[1.0, 0.0])
        assert result.objective == pytest.approx(1.0)
        assert result.x == pytest.approx([0.0, 1.0, 0.0], abs=1e-12)

    def test_negative_right_hand_side(self):
        # x >= 2 written as -x <= -2
        result = solve_lp([1.0], A_ub=[[-1.0]], b_ub=[-2.0])
        assert result.objective == pytest.approx(2.0)

    def test_infeasible(self):
        with pytest.raises(SolverFailure, match="infeasible"):
            solve_lp([1.0, 1.0], A_eq=[[1.0, 1.0]], b_eq=[-1.0])

    def test_unbounded(self):
        with pytest.raises(SolverFailure, match="unbounded"):
            solve_lp([-1.0, 0.0], A_ub=[[0.0, 1.0]], b_ub=[1.0])

    def test_redundant_equalities(self):
        result = solve_lp([1.0, 2.0], A_eq=[[1.0, 1.0], [2.0, 2.0]], b_eq=[1.0, 2.0])
        assert result.objective == pytest.approx(1.0)

    def test_degenerate_transport_terminates(self):
        # uniform 4 x 4 assignment with all-equal costs is highly degenerate
        n = 4
        A_eq = np.zeros((2 * n, n * n))
        for i in range(n):
            A_eq[i, i * n:(i + 1) * n] = 1.0
            A_eq[n + i, i::n] = 1.0
        result = solve_lp(np.ones(n * n), A_eq=A_eq, b_eq=np.full(2 * n, 0.25))
        assert result.objective == pytest.approx(1.0)
        assert result.x.sum() == pytest.approx(1.0)

    def test_agrees_with_scipy(self, rng):
        for _ in range(50):
            n, m = int(rng.integers(2, 7)), int(rng.integers(1, 6))
            A_ub = rng.uniform(0.1, 2.0, size=(m, n))
            b_ub = rng.uniform(1.0, 5.0, size=m)
            c = rng.normal(size=n)
            A_eq = np.ones((1, n))
            b_eq = np.array([float(rng.uniform(0.1, 0.5))])
            ours = solve_lp(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq)
            reference = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method='highs')
            assert reference.status == 0
            assert ours.objective == pytest.approx(reference.fun, abs=1e-9)
            assert np.all(ours.x >= 0.0)
            assert np.all(A_ub @ ours.x <= b_ub + 1e-9)


class TestIterate:
    def tableau(self, reduced_cost):
        # one basic column, one column with no positive entry
        return np.array([[1.0, -1.0, 1.0],
                         [0.0, reduced_cost, 0.0]])

    def test_roundoff_cost_is_not_improving(self):
        T = self.tableau(-2.91e-11)
        assert _iterate(T, [0], 2, 10) == 0

    def test_phase_one_without_pivot_row_is_optimal(self):
        T = self.tableau(-1e-3)
        assert _iterate(T, [0], 2, 10, phase_one=True) == 0

    def test_phase_two_without_pivot_row_is_unbounded(self):
        with pytest.raises(SolverFailure, match="unbounded"):
            _iterate(self.tableau(-1e-3), [0], 2, 10)
