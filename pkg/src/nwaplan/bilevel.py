"""Single-level reformulation of the planner/investor game.

The investor LP is replaced by its optimality conditions:

    stationarity     c + B x - V' lam + mu_up - mu_lo = 0
    primal           V y = w,  lb <= y <= ub
    complementarity  mu_lo * (y - lb) = 0,  mu_up * (ub - y) = 0

with each complementarity pair switched by a binary and a big-M.  With this
sign convention ``lam`` is the marginal investor cost of one more unit of
demand, so on a balance row whose export column is interior
``lam = pwf_LL * x``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .investor import LowerLevelForm, solve_lower_level
from .model import BINARY, CONTINUOUS, LinExpr, Model, Variable
from .solve.solution import INFEASIBLE, OPTIMAL, Solution, SolverConfig, solve_model

log = logging.getLogger(__name__)

BIGM_NEAR = 1e-6          # fraction of M treated as "at the cap"
MAX_ESCALATIONS = 3
MIN_BIG_M = 10.0


@dataclass
class KktHandles:
    y: list[int]
    lam: list[int]
    mu_up: list[int]
    mu_lo: list[int]
    price: list[int]
    u_up: dict[int, int] = field(default_factory=dict)        # column -> binary id
    u_lo: dict[int, int] = field(default_factory=dict)
    u_ie: dict[tuple[str, int], int] = field(default_factory=dict)
    big_m: np.ndarray = field(default_factory=lambda: np.zeros(0))     # per column
    bigm_rows: dict[int, list[int]] = field(default_factory=dict)      # column -> rows with -M
    stationarity_rows: list[int] = field(default_factory=list)
    primal_rows: list[int] = field(default_factory=list)

    def values(self, x):
        x = np.asarray(x, dtype=float)
        take = lambda ids: x[ids] if ids else np.zeros(0)
        return take(self.y), take(self.lam), take(self.mu_up), take(self.mu_lo), take(self.price)

    @property
    def binaries(self) -> list[int]:
        return [*self.u_lo.values(), *self.u_up.values(), *self.u_ie.values()]


def default_big_m(llf: LowerLevelForm, price_cap: float) -> np.ndarray:
    """Per-column dual cap: ten times the column's largest reachable cost gradient.

    Floored at ``MIN_BIG_M`` so zero-cost columns still admit a nonzero dual.
    """
    return np.maximum(10.0 * (np.abs(llf.c) + llf.pwf_ll * price_cap), MIN_BIG_M)


def kkt_reformulate(model: Model, llf: LowerLevelForm, price_ids=None, big_m: float | None = None,
                    tol: float = 0.0, prefix: str = "ll", import_export: bool = True) -> KktHandles:
    """Embed the lower level of ``llf`` into ``model`` through its optimality conditions.

    ``price_ids`` are the upper-level variables multiplying the columns of
    ``llf.B``.  Columns whose bounds coincide (within ``tol``) need no
    complementarity binaries.
    """
    llf.check()
    price_ids = list(price_ids or [])
    if len(price_ids) != llf.B.shape[1]:
        raise ValueError(f"expected {llf.B.shape[1]} price variables, got {len(price_ids)}")
    n, m = llf.n_cols, llf.n_rows
    if big_m is None:
        cap = max((model.variables[p].ub for p in price_ids), default=0.0)
        big_m = default_big_m(llf, cap if math.isfinite(cap) else 0.0)
    big_m = np.broadcast_to(np.asarray(big_m, dtype=float), (n,)).copy()
    if not np.all(big_m > 0):
        raise ValueError("big-M must be positive")
    names = llf.col_names
    y = [model.add_variable(f"{prefix}.{names[j]}", lb=llf.lb[j], ub=llf.ub[j]) for j in range(n)]
    lam = [model.add_variable(f"{prefix}.lam[{llf.row_names[r]}]", lb=-math.inf) for r in range(m)]
    mu_up = [model.add_variable(f"{prefix}.muU[{names[j]}]", ub=big_m[j]) for j in range(n)]
    mu_lo = [model.add_variable(f"{prefix}.muL[{names[j]}]", ub=big_m[j]) for j in range(n)]
    h = KktHandles(y, lam, mu_up, mu_lo, price_ids, big_m=big_m)

    for r in range(m):
        e = LinExpr((y[j], llf.V[r, j]) for j in np.flatnonzero(llf.V[r]))
        h.primal_rows.append(model.add_constraint(e, "=", llf.w[r], name=f"{prefix}.primal[{llf.row_names[r]}]"))
    for j in range(n):
        e = LinExpr({mu_up[j]: 1.0, mu_lo[j]: -1.0})
        for p in np.flatnonzero(llf.B[j]):
            e.add_term(price_ids[p], llf.B[j, p])
        for r in np.flatnonzero(llf.V[:, j]):
            e.add_term(lam[r], -llf.V[r, j])
        h.stationarity_rows.append(
            model.add_constraint(e, "=", -llf.c[j], name=f"{prefix}.stat[{names[j]}]"))

    for j in range(n):
        rng = llf.ub[j] - llf.lb[j]
        if rng <= tol:
            continue
        ul = model.add_variable(f"{prefix}.uL[{names[j]}]", BINARY, 0, 1)
        uu = model.add_variable(f"{prefix}.uU[{names[j]}]", BINARY, 0, 1)
        h.u_lo[j], h.u_up[j] = ul, uu
        h.bigm_rows[j] = [model.add_constraint(LinExpr({mu_lo[j]: 1.0, ul: -big_m[j]}), "<=", 0.0,
                                               name=f"{prefix}.cmuL[{names[j]}]")]
        model.add_constraint(LinExpr({y[j]: 1.0, ul: rng}), "<=", llf.ub[j],
                             name=f"{prefix}.cyL[{names[j]}]")
        h.bigm_rows[j].append(model.add_constraint(LinExpr({mu_up[j]: 1.0, uu: -big_m[j]}), "<=", 0.0,
                                                   name=f"{prefix}.cmuU[{names[j]}]"))
        model.add_constraint(LinExpr({y[j]: 1.0, uu: -rng}), ">=", llf.lb[j],
                             name=f"{prefix}.cyU[{names[j]}]")
        model.add_constraint(LinExpr({ul: 1.0, uu: 1.0}), "<=", 1.0, name=f"{prefix}.cone[{names[j]}]")

    if import_export:
        for key, je in llf.export_col.items():
            ji = llf.import_col[key]
            u = model.add_variable(f"{prefix}.uIE[{key[0]},{key[1]}]", BINARY, 0, 1)
            h.u_ie[key] = u
            model.add_constraint(LinExpr({y[ji]: 1.0, u: -llf.ub[ji]}), "<=", 0.0,
                                 name=f"{prefix}.ieI[{key[0]},{key[1]}]")
            model.add_constraint(LinExpr({y[je]: 1.0, u: llf.ub[je]}), "<=", llf.ub[je],
                                 name=f"{prefix}.ieE[{key[0]},{key[1]}]")
    return h


def set_big_m(model: Model, h: KktHandles, big_m) -> None:
    """Rewrite every big-M coefficient and dual cap (scalar or per column)."""
    big_m = np.broadcast_to(np.asarray(big_m, dtype=float), h.big_m.shape).copy()
    for j, rows in h.bigm_rows.items():
        for cid in rows:
            terms = model.constraints[cid].expr.terms
            for vid in terms:
                if model.variables[vid].kind == BINARY:
                    terms[vid] = -big_m[j]
    for j in range(len(big_m)):
        model.set_bounds(h.mu_up[j], ub=big_m[j])
        model.set_bounds(h.mu_lo[j], ub=big_m[j])
    h.big_m = big_m


def add_valid_cuts(model: Model, llf: LowerLevelForm, h: KktHandles, phi_zero: float | None = None,
                   rel_tol: float = 1e-9) -> list[int]:
    """Inequalities satisfied by every KKT point that tighten the relaxation.

    * The export payment is nonnegative (prices and exports are).
    * With ``phi_zero`` given (prices pinned to zero), the investor's cost
      cannot exceed its standalone optimum, which confines the relaxed
      investor to its optimal face.
    """
    rows = [model.add_constraint(linearized_payment(llf, h), ">=", 0.0, name="cut.payment")]
    if phi_zero is not None:
        e = LinExpr((h.y[j], llf.c[j]) for j in range(llf.n_cols))
        slack = rel_tol * max(1.0, abs(phi_zero))
        rows.append(model.add_constraint(e, "<=", phi_zero + slack, name="cut.value"))
    return rows


# --- payment ---------------------------------------------------------------

def linearized_payment(llf: LowerLevelForm, h: KktHandles) -> LinExpr:
    """Linear form equal to ``sum(lam * y_export)`` at every KKT point."""
    scale = 1.0 / llf.v_export
    e = LinExpr()
    for r in range(llf.n_rows):
        e.add_term(h.lam[r], scale * llf.w[r])
    for j in range(llf.n_cols):
        e.add_term(h.y[j], -scale * llf.c[j])
        e.add_term(h.mu_up[j], -scale * llf.ub[j])
        e.add_term(h.mu_lo[j], scale * llf.lb[j])
    return e


def direct_payment(llf: LowerLevelForm, h: KktHandles, x) -> float:
    """``sum(lam * y_export)`` evaluated term by term."""
    y, lam, *_ = h.values(x)
    return math.fsum(lam[llf.balance_row[k]] * y[j] for k, j in llf.export_col.items())


@dataclass
class PriceSignal:
    keys: list[tuple[str, int]]
    values: np.ndarray                  # $/kWh per key
    implied: np.ndarray                 # lam / pwf_LL per key
    flags: dict[tuple[str, int], str]

    @property
    def mismatches(self) -> list[tuple[str, int]]:
        return [k for k, f in self.flags.items() if f == "mismatch"]

    def max_abs_error(self, pwf_ll: float) -> float:
        """Largest |lam - pwf_LL x| / (1 + |lam|) over checked entries."""
        worst = 0.0
        for i, k in enumerate(self.keys):
            if self.flags[k] in ("ok", "mismatch"):
                lam = self.implied[i] * pwf_ll
                worst = max(worst, abs(lam - pwf_ll * self.values[i]) / (1.0 + abs(lam)))
        return worst

    def grid(self, buses, steps) -> np.ndarray:
        out = np.zeros((len(buses), steps))
        row = {b: i for i, b in enumerate(buses)}
        for (b, t), v in zip(self.keys, self.values):
            out[row[b], t] = v
        return out


def recover_price_signal(x, llf: LowerLevelForm, h: KktHandles, tol: float = 1e-6) -> PriceSignal:
    """Read the price variables and cross-check them against the balance duals."""
    y, lam, _, _, xp = h.values(x)
    implied = np.zeros(len(llf.price_keys))
    flags = {}
    for i, key in enumerate(llf.price_keys):
        j = llf.export_col[key]
        lam_r = lam[llf.balance_row[key]]
        implied[i] = lam_r / llf.pwf_ll
        interior = llf.lb[j] + tol < y[j] < llf.ub[j] - tol
        if not interior:
            flags[key] = "bound-binding, skipped" if y[j] >= llf.ub[j] - tol else "no export"
        elif abs(lam_r - llf.pwf_ll * xp[i]) <= tol * (1.0 + abs(lam_r)):
            flags[key] = "ok"
        else:
            flags[key] = "mismatch"
    return PriceSignal(list(llf.price_keys), xp.copy(), implied, flags)


# --- verification ----------------------------------------------------------

@dataclass
class KktReport:
    stationarity: float
    primal: float
    dual_sign: float
    complementarity: float
    tol: float

    @property
    def passes(self) -> dict[str, bool]:
        return {"stationarity": self.stationarity <= self.tol, "primal": self.primal <= self.tol,
                "dual_sign": self.dual_sign <= self.tol,
                "complementarity": self.complementarity <= self.tol}

    @property
    def ok(self) -> bool:
        return all(self.passes.values())

    def as_dict(self) -> dict:
        return {"stationarity": self.stationarity, "primal": self.primal, "dual_sign": self.dual_sign,
                "complementarity": self.complementarity, "tol": self.tol, "ok": self.ok}


def kkt_residuals(llf: LowerLevelForm, y, lam, mu_up, mu_lo, x_price, tol: float = 1e-6) -> KktReport:
    y, lam = np.asarray(y, float), np.asarray(lam, float)
    mu_up, mu_lo = np.asarray(mu_up, float), np.asarray(mu_lo, float)
    grad = llf.gradient(x_price)
    stat = grad - llf.V.T @ lam + mu_up - mu_lo
    prim = np.concatenate([np.abs(llf.V @ y - llf.w), np.maximum(llf.lb - y, 0), np.maximum(y - llf.ub, 0)])
    sign = np.concatenate([np.maximum(-mu_up, 0), np.maximum(-mu_lo, 0)])
    comp = np.concatenate([np.abs(mu_up * (llf.ub - y)), np.abs(mu_lo * (y - llf.lb))])
    mx = lambda a: float(a.max()) if a.size else 0.0
    return KktReport(mx(np.abs(stat)), mx(prim), mx(sign), mx(comp), tol)


def verify_kkt(llf: LowerLevelForm, h: KktHandles, x, tol: float = 1e-6) -> KktReport:
    y, lam, mu_up, mu_lo, xp = h.values(x)
    return kkt_residuals(llf, y, lam, mu_up, mu_lo, xp, tol)


@dataclass
class PaymentReport:
    planner_term: float          # (a/b) * linearized payment
    investor_income: float       # b * sum(x * y_export)
    expected: float              # (a/b) * investor_income
    relative_gap: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.relative_gap <= self.tol


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1.0)


def verify_payment_identity(llf: LowerLevelForm, h: KktHandles, x, a: float, b: float,
                            tol: float = 1e-6) -> PaymentReport:
    """Planner payment term against the investor's export income, scaled by a/b."""
    y, _, _, _, xp = h.values(x)
    planner = (a / b) * linearized_payment(llf, h).evaluate(x)
    income = llf.pwf_ll * math.fsum(xp[i] * y[llf.export_col[k]] for i, k in enumerate(llf.price_keys))
    expected = (a / b) * income
    return PaymentReport(planner, income, expected, _rel(planner, expected), tol)


def linearization_gap(llf: LowerLevelForm, h: KktHandles, x) -> tuple[float, float, float]:
    """(direct sum, linearized value, relative gap)."""
    direct = direct_payment(llf, h, x)
    lin = linearized_payment(llf, h).evaluate(x)
    return direct, lin, _rel(direct, lin)


def embedded_objective(llf: LowerLevelForm, h: KktHandles, x) -> float:
    y, *_, xp = h.values(x)
    return float(llf.gradient(xp) @ y)


def argmin_check(llf: LowerLevelForm, h: KktHandles, x) -> tuple[float, float, float]:
    """Re-solve the lower level at the solution's prices: (embedded, re-solved, relative gap)."""
    xp = h.values(x)[4]
    res = solve_lower_level(llf, xp)
    emb = embedded_objective(llf, h, x)
    return emb, res.objective, _rel(emb, res.objective)


def bigm_load(h: KktHandles, x) -> float:
    """Largest dual as a fraction of its big-M cap."""
    if not len(h.big_m):
        return 0.0
    _, _, mu_up, mu_lo, _ = h.values(x)
    return float(max(np.max(mu_up / h.big_m), np.max(mu_lo / h.big_m)))


# --- solve -----------------------------------------------------------------

def polish(model: Model, h: KktHandles, sol: Solution, cfg: SolverConfig) -> Solution:
    """Fix the complementarity pattern and re-solve the continuous problem.

    Every binary is pinned, and the variables each binary forces to a bound
    are pinned too, so the returned point satisfies complementarity exactly.
    """
    x = sol.x
    fixed = model.copy()

    def pin(vid, val):
        v = fixed.variables[vid]
        fixed.variables[vid] = Variable(v.id, v.name, CONTINUOUS, val, val)

    for vid in model.binaries:
        pin(vid, float(round(x[vid])))
    for j, u in h.u_lo.items():
        if round(x[u]) == 0:
            pin(h.mu_lo[j], 0.0)
        else:
            pin(h.y[j], model.variables[h.y[j]].lb)
    for j, u in h.u_up.items():
        if round(x[u]) == 0:
            pin(h.mu_up[j], 0.0)
        else:
            pin(h.y[j], model.variables[h.y[j]].ub)
    lp_cfg = SolverConfig(backend=cfg.backend, gap=cfg.gap, time_limit=cfg.time_limit,
                          internal_max_vars=cfg.internal_max_vars, polish=False, workdir=cfg.workdir)
    res = solve_model(fixed, lp_cfg)
    if res.status != OPTIMAL:
        log.warning("complementarity polish failed (%s); keeping solver point", res.status)
        return sol
    res.x[model.binaries] = np.round(res.x[model.binaries])
    obj = float(model.objective.evaluate(res.x))
    out = Solution(sol.status, obj, res.x, res.duals, sol.gap, sol.bound, sol.backend, sol.nodes,
                   sol.runtime + res.runtime, sol.bound_trace, sol.message)
    if math.isfinite(sol.bound):
        out.gap = max(0.0, obj - sol.bound) / max(abs(obj), 1e-9)
    return out


def solve_single_level(model: Model, h: KktHandles, cfg: SolverConfig | None = None,
                       max_rounds: int = MAX_ESCALATIONS) -> tuple[Solution, list[float]]:
    """Solve, polish and escalate big-M while any dual sits at its cap.

    Returns the accepted solution and the sequence of big-M values tried.
    """
    cfg = cfg or SolverConfig()
    tried = []
    sol = None
    for rnd in range(max_rounds + 1):
        tried.append(float(h.big_m.max(initial=0.0)))
        sol = solve_model(model, cfg)
        if sol.status == INFEASIBLE and rnd < max_rounds:
            # caps that are too tight can cut off every KKT point
            log.info("infeasible under current big-M; escalating")
            set_big_m(model, h, h.big_m * 10.0)
            continue
        if not sol.ok:
            return sol, tried
        sol = polish(model, h, sol, cfg)
        if not h.mu_up or bigm_load(h, sol.x) < 1.0 - BIGM_NEAR:
            return sol, tried
        if rnd < max_rounds:
            log.info("dual at big-M cap (round %d); escalating", rnd + 1)
            set_big_m(model, h, h.big_m * 10.0)
    sol.message = (sol.message + "; big-M still binding after escalation").strip("; ")
    return sol, tried
