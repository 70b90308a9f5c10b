"""Dense two-phase tableau simplex for small linear programs.

Solves   min c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0
with Bland's rule for both the entering and the leaving variable, so the
method terminates on degenerate problems such as transport LPs.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import SolverFailure

PIVOT_TOL = 1e-11
# entering threshold, relative to the largest constraint coefficient
COST_TOL = 1e-10
FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class LinearProgramResult:
    x: np.ndarray
    objective: float
    iterations: int


def _pivot(T: np.ndarray, row: int, col: int):
    T[row] /= T[row, col]
    factors = T[:, col].copy()
    factors[row] = 0.0
    T -= np.outer(factors, T[row])
    T[:, col] = 0.0
    T[row, col] = 1.0


def _iterate(T: np.ndarray, basis: List[int], n_cols: int, max_iter: int, phase_one: bool = False) -> int:
    """Run simplex pivots on T (reduced costs in the last row) until optimal.

    The phase-one objective is bounded below by zero, so an improving column
    without a positive entry there can only be roundoff and ends the phase.
    """
    cost_tol = COST_TOL * max(1.0, float(np.abs(T[:-1, :n_cols]).max(initial=0.0)))
    for iteration in range(max_iter):
        costs = T[-1, :n_cols]
        entering = np.flatnonzero(costs < -cost_tol)
        if entering.size == 0:
            return iteration
        col = int(entering[0])

        column = T[:-1, col]
        rhs = np.maximum(T[:-1, -1], 0.0)
        candidates = np.flatnonzero(column > PIVOT_TOL)
        if candidates.size == 0:
            if phase_one:
                logging.debug(f"Phase 1 stopped on reduced cost {costs[col]:.3g} with no pivot row")
                return iteration
            raise SolverFailure("Linear program is unbounded")
        ratios = rhs[candidates] / column[candidates]
        best = ratios.min()
        tied = candidates[ratios <= best + PIVOT_TOL * max(1.0, abs(best))]
        row = int(min(tied, key=lambda r: basis[r]))

        _pivot(T, row, col)
        basis[row] = col
    raise SolverFailure(f"Simplex did not converge within {max_iter} pivots")


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, max_iter: int = 50000) -> LinearProgramResult:
    """Solve a small LP over x >= 0 with the two-phase simplex method."""
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq
    if m == 0:
        if np.any(c < 0):
            raise SolverFailure("Linear program is unbounded")
        return LinearProgramResult(x=np.zeros(n), objective=0.0, iterations=0)

    # standard form: [A_ub I; A_eq 0] [x; s] = b, rows flipped so that b >= 0
    n_std = n + m_ub
    A = np.zeros((m, n_std))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    negative = b < 0
    A[negative] *= -1.0
    b[negative] *= -1.0

    # phase 1: one artificial per row
    T = np.zeros((m + 1, n_std + m + 1))
    T[:m, :n_std] = A
    T[:m, n_std:n_std + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n_std] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(n_std, n_std + m))
    iterations = _iterate(T, basis, n_std + m, max_iter, phase_one=True)

    scale = max(1.0, float(np.abs(b).max()))
    if -T[-1, -1] > FEASIBILITY_TOL * scale:
        raise SolverFailure(f"Linear program is infeasible (phase-1 residual {-T[-1, -1]:.3g})")

    # drive remaining artificials out of the basis, dropping redundant rows
    keep = []
    for r in range(m):
        if basis[r] < n_std:
            keep.append(r)
            continue
        nonzero = np.flatnonzero(np.abs(T[r, :n_std]) > PIVOT_TOL)
        if nonzero.size:
            _pivot(T, r, int(nonzero[0]))
            basis[r] = int(nonzero[0])
            keep.append(r)
    rows = keep

    # phase 2 on the original objective
    T2 = np.zeros((len(rows) + 1, n_std + 1))
    T2[:-1, :n_std] = T[rows, :n_std]
    T2[:-1, -1] = T[rows, -1]
    basis2 = [basis[r] for r in rows]
    cost = np.zeros(n_std)
    cost[:n] = c
    T2[-1, :n_std] = cost
    for r, j in enumerate(basis2):
        if cost[j] != 0.0:
            T2[-1] -= cost[j] * T2[r]
    iterations += _iterate(T2, basis2, n_std, max_iter)

    x = np.zeros(n_std)
    for r, j in enumerate(basis2):
        x[j] = T2[r, -1]
    x = np.maximum(x[:n], 0.0)
    logging.debug(f"Simplex solved {m}x{n} LP in {iterations} pivots")
    return LinearProgramResult(x=x, objective=float(c @ x), iterations=iterations)
