"""Dense bounded-variable primal simplex (two phases) with dual extraction.

Works directly on :class:`~nwaplan.model.StandardLp`: ``min c.y`` subject to
``V y = w`` and ``lb <= y <= ub``.  Nonbasic columns sit at a finite bound
(or at zero when free).  Phase 1 starts from an all-artificial basis.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..model import StandardLp

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"


@dataclass
class SimplexOptions:
    feas_tol: float = 1e-8
    opt_tol: float = 1e-9
    pivot_tol: float = 1e-9
    refactor_every: int = 50
    stall_threshold: int = 50
    max_iter: int = 200_000
    deadline: float = math.inf       # time.perf_counter() value after which the solve gives up


@dataclass
class SimplexResult:
    status: str
    x: np.ndarray
    duals: np.ndarray
    reduced_costs: np.ndarray
    objective: float
    iterations: int = 0
    basis: list[int] = field(default_factory=list)

    def duality_gap(self, lp: StandardLp) -> float:
        """|c.y - (w.pi + sum of reduced-cost bound contributions)|."""
        primal = float(lp.c @ self.x)
        dual = float(lp.w @ self.duals + self.reduced_costs @ self.x)
        return abs(primal - dual)


class _Tableau:
    def __init__(self, A, b, lb, ub, opts: SimplexOptions):
        self.A = A
        self.b = b
        self.lb = lb
        self.ub = ub
        self.opts = opts
        self.m, self.n = A.shape
        self.iterations = 0
        self.pivots_since_refactor = 0

    def start(self, basis, x):
        self.basis = list(basis)
        self.x = x
        self.is_basic = np.zeros(self.n, dtype=bool)
        self.is_basic[self.basis] = True
        self.refactor()

    def refactor(self):
        B = self.A[:, self.basis]
        try:
            binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            # keep the product-form inverse; it stays consistent with the pivots taken
            log.debug("simplex: basis numerically singular at refactor, keeping updated inverse")
            binv = self.binv
        self.binv = binv
        nb = ~self.is_basic
        rhs = self.b - self.A[:, nb] @ self.x[nb]
        self.x[self.basis] = self.binv @ rhs
        self.pivots_since_refactor = 0

    def run(self, cost, allowed):
        """Iterate to optimality for ``cost``; ``allowed`` masks enterable columns."""
        opts = self.opts
        stall = 0
        bland = False
        while True:
            if self.iterations >= opts.max_iter or time.perf_counter() > opts.deadline:
                return ITERATION_LIMIT
            pi = cost[self.basis] @ self.binv
            d = cost - pi @ self.A
            x = self.x
            movable = allowed & ~self.is_basic & (self.ub > self.lb)
            can_inc = movable & (x < self.ub - opts.feas_tol) & (d < -opts.opt_tol)
            can_dec = movable & (x > self.lb + opts.feas_tol) & (d > opts.opt_tol)
            cand = np.flatnonzero(can_inc | can_dec)
            if cand.size == 0:
                return OPTIMAL
            if bland:
                j = int(cand[0])
            else:
                j = int(cand[np.argmax(np.abs(d[cand]))])
            delta = 1.0 if can_inc[j] else -1.0
            alpha = self.binv @ self.A[:, j]
            theta, r = self._ratio(alpha, delta, bland)
            flip = self.ub[j] - self.lb[j]
            if not np.isfinite(theta) and not np.isfinite(flip):
                return UNBOUNDED
            self.iterations += 1
            step = min(theta, flip)
            stall = stall + 1 if step <= 1e-12 else 0
            if stall > opts.stall_threshold and not bland:
                log.debug("simplex: switching to Bland's rule after %d stalled pivots", stall)
                bland = True
            elif stall == 0:
                bland = False
            if flip <= theta:
                # bound flip, basis unchanged
                self.x[j] = self.ub[j] if delta > 0 else self.lb[j]
                self.x[self.basis] -= delta * flip * alpha
                continue
            self.x[j] += delta * theta
            self.x[self.basis] -= delta * theta * alpha
            leave = self.basis[r]
            # snap leaving variable onto the bound it reached
            self.x[leave] = self.lb[leave] if delta * alpha[r] > 0 else self.ub[leave]
            self._pivot(r, j, alpha)

    def _ratio(self, alpha, delta, bland):
        tol = self.opts.pivot_tol * max(1.0, float(np.abs(alpha).max(initial=0.0)))
        xb = self.x[self.basis]
        lb = self.lb[self.basis]
        ub = self.ub[self.basis]
        da = delta * alpha
        theta = np.full(self.m, np.inf)
        dec = da > tol
        inc = da < -tol
        with np.errstate(invalid="ignore", divide="ignore"):
            theta[dec] = (xb[dec] - lb[dec]) / da[dec]
            theta[inc] = (ub[inc] - xb[inc]) / (-da[inc])
        theta = np.where(np.isnan(theta), np.inf, theta)
        theta = np.maximum(theta, 0.0)
        tmin = theta.min() if self.m else np.inf
        if not np.isfinite(tmin):
            return np.inf, -1
        ties = np.flatnonzero(theta <= tmin + 1e-12)
        if bland:
            r = int(ties[np.argmin(np.asarray(self.basis)[ties])])
        else:
            r = int(ties[np.argmax(np.abs(alpha[ties]))])
        return float(tmin), r

    def _pivot(self, r, j, alpha):
        leave = self.basis[r]
        piv = alpha[r]
        row = self.binv[r] / piv
        self.binv -= np.outer(alpha, row)
        self.binv[r] = row
        self.basis[r] = j
        self.is_basic[leave] = False
        self.is_basic[j] = True
        self.pivots_since_refactor += 1
        if self.pivots_since_refactor >= self.opts.refactor_every:
            self.refactor()


def simplex(lp: StandardLp, options: SimplexOptions | None = None) -> SimplexResult:
    opts = options or SimplexOptions()
    V = np.asarray(lp.V, dtype=float)
    m, n = V.shape
    c = np.asarray(lp.c, dtype=float)
    w = np.asarray(lp.w, dtype=float)
    lb = np.asarray(lp.lb, dtype=float)
    ub = np.asarray(lp.ub, dtype=float)
    if c.shape != (n,) or w.shape != (m,) or lb.shape != (n,) or ub.shape != (n,):
        raise ValueError("dimension mismatch in standard-form LP")
    if np.any(lb > ub):
        return _fail(INFEASIBLE, n, m)

    x0 = np.where(np.isfinite(lb), lb, np.where(np.isfinite(ub), ub, 0.0))
    resid = w - V @ x0
    sign = np.where(resid >= 0, 1.0, -1.0)
    A = np.hstack([V, np.diag(sign)])
    big_lb = np.concatenate([lb, np.zeros(m)])
    big_ub = np.concatenate([ub, np.full(m, np.inf)])
    x = np.concatenate([x0, np.abs(resid)])
    tab = _Tableau(A, w, big_lb, big_ub, opts)
    tab.start(range(n, n + m), x)

    allowed = np.ones(n + m, dtype=bool)
    phase1_cost = np.concatenate([np.zeros(n), np.ones(m)])
    status = tab.run(phase1_cost, allowed)
    if status == ITERATION_LIMIT:
        return _fail(status, n, m, tab.iterations)
    infeas = float(tab.x[n:].sum())
    if infeas > opts.feas_tol * max(1.0, float(np.abs(w).max(initial=0.0))):
        return _fail(INFEASIBLE, n, m, tab.iterations)

    # artificials may never re-enter; pin them at zero and pivot basic ones out
    tab.ub[n:] = 0.0
    tab.x[n:] = np.where(tab.is_basic[n:], tab.x[n:], 0.0)
    allowed[n:] = False
    for r in range(m):
        col = tab.basis[r]
        if col < n:
            continue
        row = tab.binv[r] @ A[:, :n]
        row[tab.is_basic[:n]] = 0.0
        k = int(np.argmax(np.abs(row))) if n else 0
        if n and abs(row[k]) > 1e-7:
            alpha = tab.binv @ A[:, k]
            tab.x[col] = 0.0
            tab._pivot(r, k, alpha)
    tab.refactor()

    cost = np.concatenate([c, np.zeros(m)])
    status = tab.run(cost, allowed)
    tab.refactor()
    pi = cost[tab.basis] @ tab.binv
    d = c - pi @ V
    d[tab.is_basic[:n]] = 0.0
    xs = tab.x[:n].copy()
    obj = float(c @ xs) + lp.objective_constant
    if status != OPTIMAL:
        return SimplexResult(status, xs, pi, d, obj, tab.iterations, list(tab.basis))
    return SimplexResult(OPTIMAL, xs, pi, d, obj, tab.iterations, list(tab.basis))


def _fail(status, n, m, iters=0):
    nan_n = np.full(n, np.nan)
    return SimplexResult(status, nan_n, np.full(m, np.nan), nan_n.copy(), np.nan, iters)
