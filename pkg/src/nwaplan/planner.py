"""Upper-level (distribution planner) decision model.

Storage sizing and dispatch, component upgrades, feeder-head energy and
demand charges, the DER price signal, and objective assembly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import BINARY, LinExpr, Model
from .network import CaseFile
from .powerflow import FlowHandles


def pwf(r_e: float, r_c: float, discount: float, n_years: int) -> float:
    """Present worth of a recurring annual amount with growth in price and consumption."""
    if discount <= -1.0:
        raise ValueError("discount rate must exceed -1")
    if n_years < 1:
        raise ValueError("n_years must be at least 1")
    ratio = (1.0 + r_e) * (1.0 + r_c) / (1.0 + discount)
    return math.fsum(ratio ** y for y in range(1, int(n_years) + 1))


def planner_pwf(case: CaseFile) -> float:
    e = case.economics.planner
    return pwf(e.r_e, e.r_c, e.r_wacc, e.n_years)


def investor_pwf(case: CaseFile) -> float:
    e = case.economics.investor
    return pwf(e.r_e, e.r_c, e.ror, e.n_years)


# --- storage ---------------------------------------------------------------

@dataclass
class BessHandles:
    kw: dict[tuple[str, str], int] = field(default_factory=dict)        # (bus, phase)
    kwh: dict[tuple[str, str], int] = field(default_factory=dict)
    charge: dict[tuple[str, str], list[int]] = field(default_factory=dict)
    discharge: dict[tuple[str, str], list[int]] = field(default_factory=dict)
    soc: dict[tuple[str, str], list[int]] = field(default_factory=dict)  # T+1 boundary points
    capex: LinExpr = field(default_factory=LinExpr)

    def injections(self) -> dict[tuple[str, str], list[LinExpr]]:
        """Net injection of each unit: discharge minus charge."""
        return {key: [LinExpr({d: 1.0, c: -1.0}) for c, d in zip(self.charge[key], self.discharge[key])]
                for key in self.kw}


def build_bess(model: Model, case: CaseFile) -> BessHandles:
    """Per-phase storage at each candidate bus with a cyclic half-full state of charge.

    ``soc[k]`` is the stored energy at the start of step ``k`` (k = 0..T), so the
    first and last points both equal half the energy rating.
    """
    econ = case.economics.planner
    eta = econ.efficiency
    dt = case.series.step_hours
    T = case.series.steps
    h = BessHandles()
    for b in case.feeder.bess_buses:
        for p in case.feeder.buses[b].phases:
            key = (b, p)
            kw = model.add_variable(f"BkW[{b},{p}]")
            kwh = model.add_variable(f"BkWh[{b},{p}]")
            ch = [model.add_variable(f"Bch[{b},{p},{t}]") for t in range(T)]
            dis = [model.add_variable(f"Bdis[{b},{p},{t}]") for t in range(T)]
            soc = [model.add_variable(f"SOC[{b},{p},{k}]") for k in range(T + 1)]
            for t in range(T):
                model.add_constraint(LinExpr({soc[t + 1]: 1.0, soc[t]: -1.0, ch[t]: -eta * dt,
                                              dis[t]: dt / eta}), "=", 0.0, name=f"socrec[{b},{p},{t}]")
                model.add_constraint(LinExpr({ch[t]: 1.0, dis[t]: 1.0, kw: -1.0}), "<=", 0.0,
                                     name=f"inv[{b},{p},{t}]")
            for k in range(T + 1):
                model.add_constraint(LinExpr({soc[k]: 1.0, kwh: -1.0}), "<=", 0.0,
                                     name=f"soccap[{b},{p},{k}]")
            model.add_constraint(LinExpr({soc[0]: 1.0, kwh: -0.5}), "=", 0.0, name=f"socinit[{b},{p}]")
            model.add_constraint(LinExpr({soc[T]: 1.0, kwh: -0.5}), "=", 0.0, name=f"socend[{b},{p}]")
            h.kw[key], h.kwh[key] = kw, kwh
            h.charge[key], h.discharge[key], h.soc[key] = ch, dis, soc
            h.capex.add_term(kw, econ.bess_kw_cost)
            h.capex.add_term(kwh, econ.bess_kwh_cost)
    return h


# --- upgrades --------------------------------------------------------------

@dataclass
class UpgradeHandles:
    transformer: dict[str, int] = field(default_factory=dict)     # bus -> binary id
    line: dict[str, int] = field(default_factory=dict)            # line name -> binary id
    transformer_cost: LinExpr = field(default_factory=LinExpr)
    line_cost: LinExpr = field(default_factory=LinExpr)
    limit_rows: dict[tuple[str, str, str], list[int]] = field(default_factory=dict)

    def binary_of(self, component: str) -> int | None:
        if component in self.transformer:
            return self.transformer[component]
        return self.line.get(component)


def _limit(model, h, tag, expr, rating, delta, z, name):
    """-(R + z dR) <= expr <= R + z dR."""
    up, lo = expr.copy(), expr.copy()
    if z is not None:
        up.add_term(z, -delta)
        lo.add_term(z, delta)
    r1 = model.add_constraint(up, "<=", rating, name=f"{name}.up")
    r2 = model.add_constraint(lo, ">=", -rating, name=f"{name}.lo")
    h.limit_rows.setdefault(tag, []).extend([r1, r2])


def build_upgrades(model: Model, case: CaseFile, flows: FlowHandles) -> UpgradeHandles:
    feeder = case.feeder
    T = case.series.steps
    h = UpgradeHandles()
    for b in feeder.order():
        trf = feeder.buses[b].transformer
        if trf is None:
            continue
        z = None
        if trf.upgrade_kw > 0:
            z = model.add_variable(f"zT[{b}]", BINARY, 0, 1)
            h.transformer[b] = z
            h.transformer_cost.add_term(z, trf.cost)
        for p in feeder.buses[b].phases:
            for t in range(T):
                _limit(model, h, ("transformer", b, p), flows.injection[(b, p)][t], trf.rating_kw,
                       trf.upgrade_kw, z, f"trf[{b},{p},{t}]")
    for line in feeder.lines:
        if not math.isfinite(line.rating_kw):
            continue
        z = None
        if line.upgrade is not None:
            z = model.add_variable(f"zL[{line.name}]", BINARY, 0, 1)
            h.line[line.name] = z
            h.line_cost.add_term(z, line.upgrade.cost)
        delta = line.upgrade.delta_kw if line.upgrade else 0.0
        for p in line.phases:
            for t in range(T):
                _limit(model, h, ("line", line.name, p), LinExpr.var(flows.p_line[(line.name, p)][t]),
                       line.rating_kw, delta, z, f"lim[{line.name},{p},{t}]")
    return h


# --- feeder head -----------------------------------------------------------

@dataclass
class HeadCostHandles:
    p_plus: dict[str, list[int]] = field(default_factory=dict)
    p_max: list[int] = field(default_factory=list)
    energy: LinExpr = field(default_factory=LinExpr)
    demand: LinExpr = field(default_factory=LinExpr)


def build_head_costs(model: Model, case: CaseFile, flows: FlowHandles, pwf_ul: float) -> HeadCostHandles:
    """Discounted energy cost on imported head power and per-period demand charges."""
    series = case.series
    T = series.steps
    h = HeadCostHandles()
    energy_weight = pwf_ul * series.step_hours * series.annualization
    for p, ids in flows.p_head.items():
        plus = []
        for t, pid in enumerate(ids):
            v = model.add_variable(f"P0plus[{p},{t}]")
            model.add_constraint(LinExpr({v: 1.0, pid: -1.0}), ">=", 0.0, name=f"head_plus[{p},{t}]")
            h.energy.add_term(v, energy_weight * float(series.lmp[t]))
            plus.append(v)
        h.p_plus[p] = plus
    for s in range(series.n_periods):
        v = model.add_variable(f"Pmax[{s}]")
        h.p_max.append(v)
        h.demand.add_term(v, pwf_ul * float(series.demand_prices[s]))
    for t in range(T):
        s = int(series.period_of_step[t])
        e = LinExpr({h.p_max[s]: 1.0})
        for ids in flows.p_head.values():
            e.add_term(ids[t], -1.0)
        model.add_constraint(e, ">=", 0.0, name=f"peak[{t}]")
    return h


# --- price signal ----------------------------------------------------------

@dataclass
class PriceSignalHandles:
    keys: list[tuple[str, int]]            # (bus, t) in lower-level order
    ids: list[int]
    cap: float

    def as_array(self, x, buses, steps) -> np.ndarray:
        out = np.zeros((len(buses), steps))
        row = {b: i for i, b in enumerate(buses)}
        for (b, t), vid in zip(self.keys, self.ids):
            out[row[b], t] = x[vid]
        return out


def build_price_signal(model: Model, case: CaseFile, keys) -> PriceSignalHandles:
    cap = case.economics.investor.price_cap
    ids = [model.add_variable(f"xlam[{b},{t}]", lb=0.0, ub=cap) for b, t in keys]
    return PriceSignalHandles(list(keys), ids, cap)


OBJECTIVE_PARTS = ("bess", "transformers", "lines", "energy", "demand", "der_payment")


def assemble_planner_objective(model: Model, parts: dict[str, LinExpr]) -> LinExpr:
    """Sum the named cost parts into the minimization objective."""
    missing = [k for k in OBJECTIVE_PARTS if k not in parts]
    if missing:
        raise ValueError(f"objective parts missing: {', '.join(missing)}")
    obj = LinExpr()
    for k in OBJECTIVE_PARTS:
        obj.add(parts[k])
    model.set_objective(obj)
    return obj
