"""Dense two-phase simplex for standard-form linear programs.

Solves min c'x subject to A x = b, x >= 0 on a dense tableau with Dantzig
pricing and a Bland anti-cycling fallback. Problem sizes here are desk
scale (hundreds to a few thousand variables), where the dense tableau is
simple and fast enough.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_PIVOT_TOL = 1e-9
_COST_TOL = 1e-9


@dataclass
class SimplexResult:
    status: str  # optimal | unbounded | infeasible | iteration_limit
    x: np.ndarray | None
    objective: float | None
    iterations: int
    basis: list | None = None


def _pivot(tableau: np.ndarray, row: int, col: int):
    tableau[row] /= tableau[row, col]
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])


def _run_simplex(tableau: np.ndarray, basis: list, n_vars: int, max_iters: int):
    """Iterate to optimality on a tableau whose last row holds reduced costs."""
    iterations = 0
    stall = 0
    last_obj = tableau[-1, -1]
    while iterations < max_iters:
        costs = tableau[-1, :n_vars]
        if stall > 2 * (len(basis) + n_vars):
            candidates = np.nonzero(costs < -_COST_TOL)[0]  # Bland: lowest index
            if candidates.size == 0:
                return "optimal", iterations
            col = int(candidates[0])
        else:
            col = int(np.argmin(costs))
            if costs[col] >= -_COST_TOL:
                return "optimal", iterations
        column = tableau[:-1, col]
        positive = column > _PIVOT_TOL
        if not np.any(positive):
            return "unbounded", iterations
        ratios = np.full(column.shape, np.inf)
        ratios[positive] = tableau[:-1, -1][positive] / column[positive]
        row = int(np.argmin(ratios))
        # Tie-break on the leaving variable index for determinism.
        best = ratios[row]
        ties = np.nonzero(ratios <= best + 1e-12)[0]
        if ties.size > 1:
            row = int(min(ties, key=lambda i: basis[i]))
        _pivot(tableau, row, col)
        basis[row] = col
        iterations += 1
        obj = tableau[-1, -1]  # negated objective; grows as the LP improves
        if obj > last_obj + 1e-12:
            stall = 0
            last_obj = obj
        else:
            stall += 1
    return "iteration_limit", iterations


def solve_standard_form(c, A, b, max_iters: int | None = None) -> SimplexResult:
    """Two-phase simplex for min c'x, A x = b, x >= 0.

    Columns that are already unit vectors (slack columns, single-piece
    epigraph variables) seed the initial basis; artificials are only added
    for the rows that lack one.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    if max_iters is None:
        max_iters = 50 * (m + n) + 1000

    A = A.copy()
    flip = b < 0
    A[flip] *= -1.0
    b[flip] *= -1.0

    # Unit columns can serve as the starting basis for their row.
    basis_for_row = [-1] * m
    nonzero_counts = (A != 0.0).sum(axis=0)
    for col in range(n):
        if nonzero_counts[col] != 1:
            continue
        row = int(np.argmax(A[:, col] != 0.0))
        if basis_for_row[row] == -1 and A[row, col] == 1.0:
            basis_for_row[row] = col

    artificial_rows = [i for i in range(m) if basis_for_row[i] == -1]
    n_art = len(artificial_rows)

    tableau = np.zeros((m + 1, n + n_art + 1))
    tableau[:m, :n] = A
    for j, row in enumerate(artificial_rows):
        tableau[row, n + j] = 1.0
    tableau[:m, -1] = b
    basis = list(basis_for_row)
    for j, row in enumerate(artificial_rows):
        basis[row] = n + j

    # Phase-1 reduced costs: the basis matrix is a permuted identity, so
    # eliminating the artificial rows canonicalizes the cost row directly.
    for row in artificial_rows:
        tableau[-1] -= tableau[row]
    tableau[-1, n : n + n_art] = 0.0

    status, it1 = _run_simplex(tableau, basis, n + n_art, max_iters)
    if status != "optimal":
        return SimplexResult(status="iteration_limit", x=None, objective=None, iterations=it1)
    if tableau[-1, -1] < -1e-7:
        return SimplexResult(status="infeasible", x=None, objective=None, iterations=it1)

    # Drive any remaining artificials out of the basis.
    for row, var in enumerate(basis):
        if var >= n:
            pivots = np.nonzero(np.abs(tableau[row, :n]) > _PIVOT_TOL)[0]
            if pivots.size:
                _pivot(tableau, row, int(pivots[0]))
                basis[row] = int(pivots[0])

    keep_rows = [i for i, var in enumerate(basis) if var < n]
    if len(keep_rows) < m:
        rows = keep_rows + [m]
        tableau = tableau[rows]
        basis = [basis[i] for i in keep_rows]
        m = len(basis)

    # Phase 2: restore the true costs.
    tableau = np.hstack([tableau[:, :n], tableau[:, -1:]])
    tableau[-1, :n] = c
    tableau[-1, -1] = 0.0
    for row, var in enumerate(basis):
        tableau[-1] -= tableau[-1, var] * tableau[row]

    status, it2 = _run_simplex(tableau, basis, n, max_iters)
    if status != "optimal":
        return SimplexResult(status=status, x=None, objective=None, iterations=it1 + it2)

    x = np.zeros(n)
    for row, var in enumerate(basis):
        x[var] = tableau[row, -1]
    x[np.abs(x) < 1e-13] = 0.0
    return SimplexResult(
        status="optimal",
        x=x,
        objective=float(c @ x),
        iterations=it1 + it2,
        basis=list(basis),
    )


@dataclass(frozen=True)
class LinearProgram:
    """General-form LP: min c'x with rows A_ub x <= b_ub and A_eq x = b_eq, x >= 0."""

    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None


def solve_linear_program(lp: LinearProgram, max_iters: int | None = None) -> SimplexResult:
    """Convert to standard form with slack variables and solve."""
    c = np.asarray(lp.c, dtype=float)
    n = c.shape[0]
    blocks_A = []
    blocks_b = []
    n_slack = 0
    if lp.A_ub is not None:
        A_ub = np.atleast_2d(np.asarray(lp.A_ub, dtype=float))
        n_slack = A_ub.shape[0]
        blocks_A.append(np.hstack([A_ub, np.eye(n_slack)]))
        blocks_b.append(np.asarray(lp.b_ub, dtype=float))
    if lp.A_eq is not None:
        A_eq = np.atleast_2d(np.asarray(lp.A_eq, dtype=float))
        blocks_A.append(np.hstack([A_eq, np.zeros((A_eq.shape[0], n_slack))]))
        blocks_b.append(np.asarray(lp.b_eq, dtype=float))
    if not blocks_A:
        raise ValueError("LP needs at least one constraint block")
    A = np.vstack(blocks_A)
    b = np.concatenate(blocks_b)
    c_full = np.concatenate([c, np.zeros(n_slack)])
    result = solve_standard_form(c_full, A, b, max_iters=max_iters)
    if result.x is not None:
        result.x = result.x[:n]
        result.objective = float(c @ result.x)
    return result
