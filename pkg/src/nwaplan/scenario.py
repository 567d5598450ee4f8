"""Scenario assembly, solve, verification and reporting."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import bilevel
from .investor import build_investor_lp, decompose, solve_lower_level, solve_no_signal
from .model import BINARY, LinExpr, Model
from .network import CaseFile, load_case, overload_report
from .planner import (assemble_planner_objective, build_bess, build_head_costs, build_price_signal,
                      build_upgrades, investor_pwf, planner_pwf)
from .powerflow import build_lindistflow, validate_power_balance
from .solve.solution import SolverConfig

log = logging.getLogger(__name__)

SCENARIOS = ("baseline", "bess-only", "bess-der")
ALIASES = {"bess": "bess-only", "bess_only": "bess-only", "bess_der": "bess-der", "der": "bess-der"}

BREAKDOWN_KEYS = ("transformer_upgrades", "line_upgrades", "bulk_energy", "demand_charges",
                  "bess_capex", "der_payments")
CAPEX_KEYS = ("transformer_upgrades", "line_upgrades", "bess_capex")


class ScenarioError(RuntimeError):
    """Scenario cannot be built as requested."""


def scenario_kind(name: str) -> str:
    kind = ALIASES.get(name, name)
    if kind not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return kind


@dataclass
class Built:
    """Everything needed to solve and interpret one scenario model."""
    case: CaseFile
    kind: str
    model: Model
    llf: object
    kkt: bilevel.KktHandles
    prices: object
    bess: object
    flows: object
    upgrades: object
    head: object
    parts: dict[str, LinExpr]
    a: float
    b: float
    forced: list[str] = field(default_factory=list)


def der_injections(case: CaseFile, llf, y_ids) -> dict:
    """Net grid injection of each DER site, split equally over its phases (kW)."""
    out = {}
    for bus in llf.buses:
        phases = case.feeder.buses[bus].phases
        k = 1.0 / (llf.step_energy * len(phases))
        for p in phases:
            out[(bus, p)] = [LinExpr({y_ids[llf.export_col[(bus, t)]]: k,
                                      y_ids[llf.import_col[(bus, t)]]: -k})
                             for t in range(case.series.steps)]
    return out


def _merge(*maps):
    out: dict = {}
    for mp in maps:
        for key, exprs in mp.items():
            if key in out:
                out[key] = [a + b for a, b in zip(out[key], exprs)]
            else:
                out[key] = list(exprs)
    return out


def _planner_block(model: Model, case: CaseFile, llf, y_ids, a: float):
    bess = build_bess(model, case)
    flows = build_lindistflow(model, case, _merge(bess.injections(), der_injections(case, llf, y_ids)),
                              replaced_loads=llf.buses)
    upgrades = build_upgrades(model, case, flows)
    head = build_head_costs(model, case, flows, a)
    parts = {"bess": bess.capex, "transformers": upgrades.transformer_cost, "lines": upgrades.line_cost,
             "energy": head.energy, "demand": head.demand}
    return bess, flows, upgrades, head, parts


def build_scenario(case: CaseFile, kind: str) -> Built:
    """Single-level model of one scenario with the investor embedded through its KKT conditions."""
    kind = scenario_kind(kind)
    a, b = planner_pwf(case), investor_pwf(case)
    model = Model(f"{case.name}:{kind}")
    llf = build_investor_lp(case)
    prices = build_price_signal(model, case, llf.price_keys)
    kkt = bilevel.kkt_reformulate(model, llf, prices.ids)
    bess, flows, upgrades, head, parts = _planner_block(model, case, llf, kkt.y, a)
    parts["der_payment"] = bilevel.linearized_payment(llf, kkt) * (a / b)
    assemble_planner_objective(model, parts)
    built = Built(case, kind, model, llf, kkt, prices, bess, flows, upgrades, head, parts, a, b)
    apply_fixings(built)
    phi_zero = None
    if kind != "bess-der":
        phi_zero = solve_lower_level(llf).objective
    bilevel.add_valid_cuts(model, llf, kkt, phi_zero)
    return built


def build_fixed_price(case: CaseFile, x_price, phi: float, llf=None, rel_tol: float = 1e-9):
    """Planner model facing an investor whose prices are fixed at ``x_price``.

    The investor appears only through its primal rows and the requirement that
    its cost not exceed the optimum ``phi``; the planner picks among the
    investor's optimal plans.  Returns (model, objective parts).
    """
    a = planner_pwf(case)
    llf = llf or build_investor_lp(case)
    x_price = np.asarray(x_price, dtype=float)
    model = Model(f"{case.name}:fixed-price")
    y = [model.add_variable(f"ll.{n}", lb=lo, ub=hi) for n, lo, hi in zip(llf.col_names, llf.lb, llf.ub)]
    for r in range(llf.n_rows):
        model.add_constraint(LinExpr((y[j], llf.V[r, j]) for j in np.flatnonzero(llf.V[r])), "=", llf.w[r])
    grad = llf.gradient(x_price)
    model.add_constraint(LinExpr((y[j], grad[j]) for j in range(llf.n_cols)), "<=",
                         phi + rel_tol * max(1.0, abs(phi)), name="value")
    for key, je in llf.export_col.items():
        ji = llf.import_col[key]
        u = model.add_variable(f"uIE[{key[0]},{key[1]}]", BINARY, 0, 1)
        model.add_constraint(LinExpr({y[ji]: 1.0, u: -llf.ub[ji]}), "<=", 0.0)
        model.add_constraint(LinExpr({y[je]: 1.0, u: llf.ub[je]}), "<=", llf.ub[je])
    *_, parts = _planner_block(model, case, llf, y, a)
    parts["der_payment"] = LinExpr((y[llf.export_col[k]], a * x_price[i])
                                   for i, k in enumerate(llf.price_keys))
    assemble_planner_objective(model, parts)
    return model, parts


def apply_fixings(built: Built) -> None:
    model = built.model
    if built.kind in ("baseline", "bess-only"):
        for vid in built.prices.ids:
            model.set_bounds(vid, 0.0, 0.0)
    if built.kind != "baseline":
        return
    for vid in [*built.bess.kw.values(), *built.bess.kwh.values()]:
        model.set_bounds(vid, 0.0, 0.0)
    for item in overload_report(built.case):
        if not item.overloaded:
            continue
        z = built.upgrades.binary_of(item.component)
        if z is None:
            raise ScenarioError(f"overloaded {item.kind} {item.component} has no upgrade option")
        model.set_bounds(z, 1.0, 1.0)
        built.forced.append(item.component)


# --- report ----------------------------------------------------------------

@dataclass
class ScenarioReport:
    case_name: str
    case_digest: str
    case_path: str
    horizon: int
    scenario: str
    status: str
    total_lcc: float = math.nan
    npv_vs_baseline: float | None = None
    gap: float = math.nan
    bound: float = math.nan
    runtime_s: float = 0.0
    backend: str = ""
    big_m: list[float] = field(default_factory=list)
    breakdown: dict[str, float] = field(default_factory=dict)
    upgrades: dict[str, int] = field(default_factory=dict)
    upgrade_counts: dict[str, list[int]] = field(default_factory=dict)
    forced_upgrades: list[str] = field(default_factory=list)
    bess: dict[str, dict] = field(default_factory=dict)
    der_capacity_kw: dict[str, float] = field(default_factory=dict)
    price_signal: dict = field(default_factory=dict)
    investor: dict = field(default_factory=dict)
    investor_no_signal: dict = field(default_factory=dict)
    economics: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    lower_level: dict = field(default_factory=dict)
    provenance: list[str] = field(default_factory=list)
    message: str = ""

    @property
    def solved(self) -> bool:
        return math.isfinite(self.total_lcc)

    @property
    def capex(self) -> float:
        return math.fsum(self.breakdown[k] for k in CAPEX_KEYS)

    @property
    def operating(self) -> float:
        return math.fsum(v for k, v in self.breakdown.items() if k not in CAPEX_KEYS)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, default=_jsonable)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "ScenarioReport":
        return cls(**json.loads(Path(path).read_text()))


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


def bess_residuals(built: Built, x) -> dict[str, float]:
    """Worst violations of the storage rules at ``x``."""
    econ = built.case.economics.planner
    eta, dt = econ.efficiency, built.case.series.step_hours
    h = built.bess
    out = {"recursion": 0.0, "initial": 0.0, "final": 0.0, "power": 0.0, "energy": 0.0}
    for key in h.kw:
        soc = x[h.soc[key]]
        ch, dis = x[h.charge[key]], x[h.discharge[key]]
        kw, kwh = x[h.kw[key]], x[h.kwh[key]]
        rec = soc[1:] - soc[:-1] - eta * dt * ch + dt / eta * dis
        out["recursion"] = max(out["recursion"], float(np.abs(rec).max(initial=0.0)))
        out["initial"] = max(out["initial"], abs(soc[0] - 0.5 * kwh))
        out["final"] = max(out["final"], abs(soc[-1] - 0.5 * kwh))
        out["power"] = max(out["power"], float(np.max(ch + dis - kw, initial=0.0)))
        out["energy"] = max(out["energy"], float(np.max(soc - kwh, initial=0.0)))
    return out


def verify(built: Built, x, tol: float = 1e-6) -> dict:
    """All post-solve checks; ``ok`` is set when the lower-level conditions hold."""
    llf, kkt = built.llf, built.kkt
    kkt_rep = bilevel.verify_kkt(llf, kkt, x, tol)
    pay = bilevel.verify_payment_identity(llf, kkt, x, built.a, built.b, tol)
    direct, lin, lin_gap = bilevel.linearization_gap(llf, kkt, x)
    emb, resolved, arg_gap = bilevel.argmin_check(llf, kkt, x)
    sig = bilevel.recover_price_signal(x, llf, kkt, tol)
    bal = validate_power_balance(built.model, built.flows, x, 1e-8)
    bess = bess_residuals(built, x)
    checks = {
        "kkt": kkt_rep.as_dict(),
        "payment": {"planner_term": pay.planner_term, "investor_income": pay.investor_income,
                    "expected": pay.expected, "relative_gap": pay.relative_gap, "ok": pay.ok},
        "linearization": {"direct": direct, "linearized": lin, "relative_gap": lin_gap,
                          "ok": lin_gap <= tol},
        "argmin": {"embedded": emb, "resolved": resolved, "relative_gap": arg_gap,
                   "ok": arg_gap <= 1e-5},
        "price_recovery": {"max_error": sig.max_abs_error(llf.pwf_ll),
                           "checked": sum(f in ("ok", "mismatch") for f in sig.flags.values()),
                           "mismatches": len(sig.mismatches), "ok": not sig.mismatches},
        "power_balance": {"max_balance": bal.max_balance, "max_voltage": bal.max_voltage, "ok": bal.ok},
        "bess": {**bess, "ok": max(bess.values(), default=0.0) <= tol},
        "bigm_load": bilevel.bigm_load(kkt, x),
    }
    checks["ok"] = all(checks[k]["ok"] for k in ("kkt", "payment", "linearization", "argmin",
                                                  "price_recovery"))
    return checks


def make_report(built: Built, sol, runtime: float, big_m: list[float], case_path: str = "") -> ScenarioReport:
    case = built.case
    rep = ScenarioReport(case.name, case.digest, case_path, case.series.steps, built.kind, sol.status,
                         gap=float(sol.gap), bound=float(sol.bound), runtime_s=runtime,
                         backend=sol.backend, big_m=list(big_m), forced_upgrades=list(built.forced),
                         provenance=list(case.provenance) + [
                             f"horizon of {case.series.steps} steps weighted by "
                             f"{case.series.annualization:.6g} repetitions per year"],
                         message=sol.message)
    pe = case.economics.planner
    rep.economics = {"pwf_ul": built.a, "pwf_ll": built.b, "r_e": pe.r_e, "r_c": pe.r_c,
                     "r_wacc": pe.r_wacc, "n_years": pe.n_years}
    if sol.x is None:
        return rep
    x = sol.x
    names = {"bess": "bess_capex", "transformers": "transformer_upgrades", "lines": "line_upgrades",
             "energy": "bulk_energy", "demand": "demand_charges", "der_payment": "der_payments"}
    rep.breakdown = {names[k]: float(e.evaluate(x)) for k, e in built.parts.items()}
    rep.total_lcc = float(built.model.objective.evaluate(x))
    up = built.upgrades
    rep.upgrades = {**{f"transformer {b}": int(round(x[z])) for b, z in up.transformer.items()},
                    **{f"line {n}": int(round(x[z])) for n, z in up.line.items()}}
    rep.upgrade_counts = {"transformers": [sum(int(round(x[z])) for z in up.transformer.values()),
                                           len(up.transformer)],
                          "lines": [sum(int(round(x[z])) for z in up.line.values()), len(up.line)]}
    for bus in case.feeder.bess_buses:
        keys = [k for k in built.bess.kw if k[0] == bus]
        kw = sum(float(x[built.bess.kw[k]]) for k in keys)
        kwh = sum(float(x[built.bess.kwh[k]]) for k in keys)
        rep.bess[bus] = {"kw": kw, "kwh": kwh, "duration_h": kwh / kw if kw > 1e-9 else 0.0,
                         "per_phase": {k[1]: [float(x[built.bess.kw[k]]), float(x[built.bess.kwh[k]])]
                                       for k in keys}}
    llf, kkt = built.llf, built.kkt
    y, lam, mu_up, mu_lo, xp = kkt.values(x)
    rep.der_capacity_kw = {b: float(y[j]) for b, j in llf.capacity_col.items()}
    rep.price_signal = {"buses": llf.buses, "steps": case.series.steps,
                        "values": built.prices.as_array(x, llf.buses, case.series.steps).tolist()}
    rep.investor = decompose(case, llf, y, xp).as_dict()
    rep.investor_no_signal = solve_no_signal(case, llf).as_dict()
    rep.lower_level = {"y": y.tolist(), "lam": lam.tolist(), "mu_up": mu_up.tolist(),
                       "mu_lo": mu_lo.tolist(), "price": xp.tolist()}
    rep.checks = verify(built, x)
    return rep


def run_scenario(case: CaseFile | str | Path, scenario: str, config: SolverConfig | None = None,
                 horizon: int | None = None) -> ScenarioReport:
    """Build, solve and verify one scenario; never raises on solver outcomes."""
    case_path = ""
    if not isinstance(case, CaseFile):
        case_path = str(Path(case).resolve())
        case = load_case(case)
    case = case.with_horizon(horizon)
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    built = build_scenario(case, scenario)
    sol, tried = bilevel.solve_single_level(built.model, built.kkt, cfg)
    return make_report(built, sol, time.perf_counter() - t0, tried, case_path)


# --- comparison and derived tables ------------------------------------------

def compare(reports: list[ScenarioReport]) -> list[dict]:
    """Comparison rows with savings measured against the baseline report."""
    if len(reports) < 2:
        raise ValueError("comparison needs at least two reports")
    digests = {r.case_digest for r in reports}
    if len(digests) != 1:
        raise ValueError("reports come from different cases (hash mismatch)")
    base = next((r for r in reports if r.scenario == "baseline"), reports[0])
    rows = []
    for r in reports:
        r.npv_vs_baseline = base.total_lcc - r.total_lcc
        row = {"scenario": r.scenario, "status": r.status, "total_lcc": r.total_lcc,
               "npv_vs_baseline": r.npv_vs_baseline, "gap": r.gap}
        row.update(r.breakdown)
        for k, (n_up, n_all) in r.upgrade_counts.items():
            row[f"{k}_upgraded"] = f"{n_up}/{n_all}"
        row["bess_kw"] = sum(v["kw"] for v in r.bess.values())
        row["bess_kwh"] = sum(v["kwh"] for v in r.bess.values())
        row["der_kw"] = sum(r.der_capacity_kw.values())
        rows.append(row)
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    keys: list[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


@dataclass
class CashflowSeries:
    capex: float
    operating: list[float]          # discounted, years 1..N

    @property
    def total(self) -> float:
        return self.capex + math.fsum(self.operating)

    def to_csv(self) -> str:
        lines = ["year,discounted_cost_usd", f"0,{self.capex!r}"]
        lines += [f"{y},{v!r}" for y, v in enumerate(self.operating, start=1)]
        return "\n".join(lines) + "\n"


def cashflow(report: ScenarioReport) -> CashflowSeries:
    """Year-zero capital plus discounted operating cost for each year."""
    if not report.solved:
        raise ValueError("report holds no solution")
    e = report.economics
    ratio = (1 + e["r_e"]) * (1 + e["r_c"]) / (1 + e["r_wacc"])
    annual = report.operating / e["pwf_ul"]
    return CashflowSeries(report.capex, [annual * ratio ** y for y in range(1, int(e["n_years"]) + 1)])


def price_signal_csv(report: ScenarioReport) -> str:
    if not report.solved:
        raise ValueError("report holds no solution")
    ps = report.price_signal
    lines = ["bus,t,price_usd_per_kwh"]
    for bus, row in zip(ps["buses"], ps["values"]):
        lines += [f"{bus},{t},{v!r}" for t, v in enumerate(row)]
    return "\n".join(lines) + "\n"


INVESTOR_FIELDS = ("net_present_cost", "capex", "om", "energy_cost", "income", "savings")


def investor_table(report: ScenarioReport) -> str:
    """Investor outcome without and with the price signal."""
    if not report.solved:
        raise ValueError("report holds no solution")
    cols = {"no signal": report.investor_no_signal, "with signal": report.investor}
    lines = ["item," + ",".join(cols)]
    for f in INVESTOR_FIELDS:
        lines.append(f + "," + ",".join(repr(float(c[f])) for c in cols.values()))
    buses = sorted(set(report.investor["capacity_kw"]) | set(report.investor_no_signal["capacity_kw"]))
    for b in buses:
        lines.append(f"capacity_kw_{b}," + ",".join(repr(float(c["capacity_kw"].get(b, 0.0)))
                                                   for c in cols.values()))
    return "\n".join(lines) + "\n"


def rebuild(report: ScenarioReport) -> Built:
    """Reconstruct the scenario model a report was produced from."""
    if not report.case_path:
        raise ValueError("report does not record its case file")
    case = load_case(report.case_path).with_horizon(report.horizon)
    if case.digest != report.case_digest:
        raise ValueError("case file changed since the report was produced (hash mismatch)")
    return build_scenario(case, report.scenario)
