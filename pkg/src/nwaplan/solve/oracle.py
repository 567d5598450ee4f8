"""Brute-force reference solvers used to check the main solve path.

These are deliberately naive: vertex enumeration for LPs, full binary
enumeration for MILPs, and a price-grid search for the bilevel problem.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linprog

from ..model import Model, StandardLp
from .bnb import relaxed_standard_form


def enumerate_vertices(lp: StandardLp, tol: float = 1e-9):
    """Yield every basic feasible point of ``V y = w, lb <= y <= ub``.

    Nonbasic columns are placed at each of their finite bounds (free
    columns at zero); basic columns are solved for.
    """
    V, w, lb, ub = lp.V, lp.w, lp.lb, lp.ub
    m, n = V.shape
    if m == 0:
        choices = [_bound_choices(lb[j], ub[j]) for j in range(n)]
        for vals in itertools.product(*choices):
            yield np.array(vals, dtype=float)
        return
    rank = np.linalg.matrix_rank(V)
    rows = _independent_rows(V, rank)
    Vr, wr = V[rows], w[rows]
    for basis in itertools.combinations(range(n), rank):
        B = Vr[:, basis]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        nonbasic = [j for j in range(n) if j not in basis]
        choices = [_bound_choices(lb[j], ub[j]) for j in nonbasic]
        for vals in itertools.product(*choices):
            y = np.zeros(n)
            y[nonbasic] = vals
            y[list(basis)] = np.linalg.solve(B, wr - Vr[:, nonbasic] @ y[nonbasic])
            if np.all(y >= lb - tol) and np.all(y <= ub + tol) and np.allclose(V @ y, w, atol=1e-7):
                yield y


def _bound_choices(lo, hi):
    out = [v for v in (lo, hi) if math.isfinite(v)]
    return sorted(set(out)) or [0.0]


def _independent_rows(V, rank):
    rows: list[int] = []
    for i in range(V.shape[0]):
        if np.linalg.matrix_rank(V[rows + [i]]) > len(rows):
            rows.append(i)
        if len(rows) == rank:
            break
    return rows


def vertex_enumeration_optimum(lp: StandardLp) -> float:
    """Best objective over basic feasible points (``inf`` when infeasible).

    Only valid for LPs with a finite optimum.
    """
    best = math.inf
    for y in enumerate_vertices(lp):
        best = min(best, float(lp.c @ y))
    return best + lp.objective_constant if math.isfinite(best) else best


def _lp_value(lp: StandardLp, lb, ub) -> float:
    res = linprog(lp.c, A_eq=lp.V, b_eq=lp.w, bounds=np.column_stack([lb, ub]), method="highs")
    if res.status != 0:
        return math.inf
    return float(res.fun) + lp.objective_constant


def enumerate_binaries(model: Model, max_binaries: int = 16) -> tuple[float, dict[int, float] | None]:
    """Exhaustive MILP oracle: solve the continuous LP for each 0/1 assignment."""
    bins = model.binaries
    if len(bins) > max_binaries:
        raise ValueError(f"{len(bins)} binaries exceed enumeration guard {max_binaries}")
    lp = relaxed_standard_form(model)
    best, best_assign = math.inf, None
    for assign in itertools.product((0.0, 1.0), repeat=len(bins)):
        lb, ub = lp.lb.copy(), lp.ub.copy()
        for k, val in zip(bins, assign):
            col = lp.col_of_var[k]
            if not lp.lb[col] <= val <= lp.ub[col]:
                break
            lb[col] = ub[col] = val
        else:
            val = _lp_value(lp, lb, ub)
            if val < best:
                best, best_assign = val, dict(zip(bins, assign))
    return best, best_assign


def bilevel_oracle(case, grid, config=None, max_evaluations: int = 1_000_000):
    """Exhaustive search over price vectors drawn from ``grid`` on every (bus, step).

    For each vector the investor LP is solved with the internal simplex, then
    the planner's best reply among the investor's optimal plans is found.
    Returns ``(best_prices, best_cost)``.
    """
    from ..investor import build_investor_lp, solve_lower_level
    from ..scenario import build_fixed_price
    from .solution import SolverConfig, solve_model

    grid = np.asarray(sorted(set(float(g) for g in grid)))
    llf = build_investor_lp(case)
    n = len(llf.price_keys)
    if n > 6:
        raise ValueError(f"{n} price coordinates exceed the oracle limit of 6")
    if len(grid) ** n > max_evaluations:
        raise ValueError(f"{len(grid)}^{n} evaluations exceed the guard {max_evaluations}")
    cfg = config or SolverConfig(backend="internal", gap=1e-9)
    best, best_x = math.inf, None
    for combo in itertools.product(grid, repeat=n):
        x = np.array(combo)
        phi = solve_lower_level(llf, x).objective
        model, _ = build_fixed_price(case, x, phi, llf)
        sol = solve_model(model, cfg)
        if sol.ok and sol.objective < best - 1e-12 * max(1.0, abs(best) if math.isfinite(best) else 1.0):
            best, best_x = sol.objective, x
    return best_x, best
