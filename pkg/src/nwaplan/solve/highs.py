"""HiGHS backend through :mod:`scipy.optimize` (``milp`` / ``linprog``)."""

from __future__ import annotations

import logging
import math
import time

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from ..model import Model
from .solution import INFEASIBLE, LIMIT, OPTIMAL, UNBOUNDED, Solution, SolverConfig

log = logging.getLogger(__name__)


def _matrix(model: Model):
    rows, cols, vals = model.row_arrays()
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(len(model.constraints), model.n_vars))
    rhs = np.array([c.rhs for c in model.constraints])
    senses = np.array([c.sense for c in model.constraints])
    return A, rhs, senses


def solve_lp_highs(model: Model, fixed: dict[int, float] | None = None,
                   tol: float = 1e-9, time_limit: float = 600.0) -> Solution:
    """Continuous solve with duals; ``fixed`` pins selected variables."""
    t0 = time.perf_counter()
    A, rhs, senses = _matrix(model)
    lb, ub = model.bounds()
    if fixed:
        idx = np.fromiter(fixed.keys(), dtype=int)
        lb[idx] = ub[idx] = np.fromiter(fixed.values(), dtype=float)
    c = model.objective_vector()
    eq = senses == "="
    le = senses == "<="
    ge = senses == ">="
    A_ub = sparse.vstack([A[le], -A[ge]]).tocsr()
    b_ub = np.concatenate([rhs[le], -rhs[ge]])
    res = linprog(c, A_ub=A_ub if A_ub.shape[0] else None, b_ub=b_ub if A_ub.shape[0] else None,
                  A_eq=A[eq] if eq.any() else None, b_eq=rhs[eq] if eq.any() else None,
                  bounds=np.column_stack([lb, ub]), method="highs",
                  options={"primal_feasibility_tolerance": tol,
                           "dual_feasibility_tolerance": tol,
                           "time_limit": time_limit, "presolve": True})
    runtime = time.perf_counter() - t0
    if res.status == 2:
        return Solution(INFEASIBLE, backend="highs", runtime=runtime, message=res.message)
    if res.status == 3:
        return Solution(UNBOUNDED, backend="highs", runtime=runtime, message=res.message)
    if res.status != 0:
        return Solution(LIMIT, backend="highs", runtime=runtime, message=res.message)
    duals = np.zeros(len(model.constraints))
    duals[eq] = res.eqlin.marginals
    n_le = int(le.sum())
    ineq_m = res.ineqlin.marginals
    duals[le] = ineq_m[:n_le]
    duals[ge] = -ineq_m[n_le:]
    x = np.asarray(res.x, dtype=float)
    obj = float(model.objective.evaluate(x))
    return Solution(OPTIMAL, obj, x, duals, 0.0, obj, backend="highs", runtime=runtime)


def solve_highs(model: Model, config: SolverConfig | None = None) -> Solution:
    cfg = config or SolverConfig()
    bins = model.binaries
    if not bins:
        return solve_lp_highs(model, time_limit=cfg.time_limit)
    t0 = time.perf_counter()
    A, rhs, senses = _matrix(model)
    lo = np.where(senses == ">=", rhs, np.where(senses == "=", rhs, -np.inf))
    hi = np.where(senses == "<=", rhs, np.where(senses == "=", rhs, np.inf))
    lb, ub = model.bounds()
    integrality = np.zeros(model.n_vars)
    integrality[bins] = 1
    res = milp(model.objective_vector(), integrality=integrality, bounds=Bounds(lb, ub),
               constraints=LinearConstraint(A, lo, hi),
               options={"mip_rel_gap": cfg.gap, "time_limit": cfg.time_limit,
                        "node_limit": cfg.node_limit, "presolve": True, "disp": False})
    runtime = time.perf_counter() - t0
    if res.x is None:
        status = INFEASIBLE if res.status == 2 else (UNBOUNDED if res.status == 3 else LIMIT)
        return Solution(status, backend="highs", runtime=runtime, message=res.message)
    x = np.asarray(res.x, dtype=float)
    x[bins] = np.round(x[bins])
    status = OPTIMAL if res.status == 0 else LIMIT
    bound = float(getattr(res, "mip_dual_bound", math.nan)) + model.objective.constant
    gap = float(getattr(res, "mip_gap", math.nan))
    sol = Solution(status, float(model.objective.evaluate(x)), x, None, gap, bound,
                   backend="highs", runtime=runtime, message=res.message)
    if cfg.polish:
        polished = solve_lp_highs(model, fixed={k: x[k] for k in bins},
                                  time_limit=cfg.time_limit)
        if polished.status == OPTIMAL:
            sol.x = polished.x
            sol.x[bins] = np.round(sol.x[bins])
            sol.duals = polished.duals
            sol.objective = float(model.objective.evaluate(sol.x))
            if math.isfinite(sol.bound):
                sol.gap = max(0.0, sol.objective - sol.bound) / max(abs(sol.objective), 1e-9)
        else:
            log.warning("polishing LP failed (%s); keeping raw MILP point", polished.status)
        sol.runtime = time.perf_counter() - t0
    return sol
