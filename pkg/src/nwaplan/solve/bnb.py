"""Best-bound branch-and-bound over binaries using the dense simplex."""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import replace

import numpy as np

from ..model import CONTINUOUS, Model, StandardLp, Variable, standard_form
from .simplex import OPTIMAL as LP_OPTIMAL
from .simplex import ITERATION_LIMIT as LP_LIMIT
from .simplex import UNBOUNDED as LP_UNBOUNDED
from .simplex import SimplexOptions, simplex
from .solution import INFEASIBLE, LIMIT, OPTIMAL, UNBOUNDED, Solution, SolverConfig

log = logging.getLogger(__name__)


def relaxed_standard_form(model: Model) -> StandardLp:
    """Standard form of the LP relaxation (binaries become [lb, ub] continuous)."""
    relaxed = model.copy()
    relaxed.variables = [Variable(v.id, v.name, CONTINUOUS, v.lb, v.ub) for v in model.variables]
    return standard_form(relaxed)


def _relative_gap(incumbent: float, bound: float) -> float:
    if not math.isfinite(incumbent):
        return math.inf
    if not math.isfinite(bound):
        return math.inf
    return max(0.0, incumbent - bound) / max(abs(incumbent), 1e-9)


def branch_and_bound(model: Model, config: SolverConfig | None = None) -> Solution:
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    lp = relaxed_standard_form(model)
    n = model.n_vars
    bins = np.array(model.binaries, dtype=int)
    opts = SimplexOptions(feas_tol=cfg.feas_tol, opt_tol=cfg.opt_tol, deadline=t0 + cfg.time_limit)

    def solve_node(lb, ub):
        node_lp = StandardLp(lp.c, lp.V, lp.w, lb, ub, lp.var_of_col, lp.col_of_var,
                             lp.row_of_con, lp.slack_rows, lp.objective_constant)
        return simplex(node_lp, opts)

    incumbent = math.inf
    best_x = None
    best_duals = None
    counter = 0
    nodes = 0
    trace: list[float] = []
    root = solve_node(lp.lb.copy(), lp.ub.copy())
    if root.status == LP_LIMIT:
        return Solution(LIMIT, backend="internal", runtime=time.perf_counter() - t0,
                        message="root relaxation hit the time or iteration limit")
    if root.status == LP_UNBOUNDED:
        return Solution(UNBOUNDED, backend="internal", runtime=time.perf_counter() - t0)
    if root.status != LP_OPTIMAL:
        return Solution(INFEASIBLE, backend="internal", runtime=time.perf_counter() - t0)
    heap = [(root.objective, counter, lp.lb.copy(), lp.ub.copy(), root)]
    status = OPTIMAL
    global_bound = root.objective
    while heap:
        bound, _, lb, ub, res = heapq.heappop(heap)
        global_bound = bound
        trace.append(bound)
        if _relative_gap(incumbent, bound) <= cfg.gap:
            heap.insert(0, (bound, -1, lb, ub, res))  # keep for bound bookkeeping
            break
        if bound >= incumbent:
            continue
        nodes += 1
        if nodes > cfg.node_limit or time.perf_counter() - t0 > cfg.time_limit:
            heap.insert(0, (bound, -1, lb, ub, res))
            status = LIMIT
            break
        xb = res.x[bins] if bins.size else np.array([])
        frac = np.abs(xb - np.round(xb))
        if bins.size == 0 or frac.max() <= cfg.int_tol:
            if res.objective < incumbent:
                incumbent = res.objective
                best_x = res.x[:n].copy()
                best_duals = res.duals.copy()
            continue
        # most fractional, lowest id on ties
        score = np.abs(xb - np.floor(xb) - 0.5)
        k = int(bins[np.flatnonzero(score <= score.min() + 1e-12)[0]])
        col = lp.col_of_var[k]
        for val in (0.0, 1.0):
            clb, cub = lb.copy(), ub.copy()
            clb[col] = cub[col] = val
            child = solve_node(clb, cub)
            if child.status == LP_LIMIT:
                # an unfinished child proves nothing; keep the parent's bound open
                heap.insert(0, (bound, -1, lb, ub, res))
                status = LIMIT
                break
            if child.status != LP_OPTIMAL or child.objective >= incumbent:
                continue
            counter += 1
            heapq.heappush(heap, (max(child.objective, bound), counter, clb, cub, child))
        if status == LIMIT:
            break
    if heap:
        global_bound = min(global_bound, min(h[0] for h in heap))
    elif math.isfinite(incumbent):
        global_bound = incumbent
    if math.isfinite(incumbent):
        # open nodes already dominated by the incumbent say nothing about the optimum
        global_bound = min(global_bound, incumbent)
    runtime = time.perf_counter() - t0
    if best_x is None:
        st = LIMIT if status == LIMIT else INFEASIBLE
        return Solution(st, backend="internal", nodes=nodes, runtime=runtime, bound_trace=trace)
    x = best_x.copy()
    if bins.size:
        x[bins] = np.round(x[bins])
    obj = float(model.objective.evaluate(x))
    sol = Solution(status, obj, x, best_duals, _relative_gap(obj, global_bound), global_bound,
                   backend="internal", nodes=nodes, runtime=runtime, bound_trace=trace)
    if cfg.polish and bins.size:
        _polish(model, sol, opts)
    return sol


def _polish(model: Model, sol: Solution, opts: SimplexOptions) -> None:
    """Fix binaries at the incumbent and re-solve the LP for clean values and duals."""
    fixed = model.copy()
    for k in model.binaries:
        v = fixed.variables[k]
        fixed.variables[k] = Variable(v.id, v.name, CONTINUOUS, sol.x[k], sol.x[k])
    lp = standard_form(fixed)
    res = simplex(lp, replace(opts, deadline=math.inf))
    if res.status == LP_OPTIMAL and res.objective <= sol.objective + 1e-9 * max(1.0, abs(sol.objective)):
        sol.x = res.x[:model.n_vars].copy()
        sol.duals = res.duals.copy()
        sol.objective = float(model.objective.evaluate(sol.x))
