"""Three-phase unbalanced LinDistFlow constraints over a planning horizon.

Real power is in kW, reactive power in kvar and voltage as per-unit
magnitude squared.  Net injections ``P_j`` are carried as linear
expressions (constant load plus any decision-dependent terms) rather than
as separate variables, so a rated bus limit can be written directly on
them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import LinExpr, Model
from .network import PHASE_INDEX, PHASES, CaseFile, Line

ALPHA = np.array([1.0, np.exp(-2j * np.pi / 3), np.exp(2j * np.pi / 3)])
GAMMA = np.outer(ALPHA, np.conj(ALPHA))


@dataclass(frozen=True)
class SensitivityMatrices:
    mp: np.ndarray      # pu voltage-squared per pu real power
    mq: np.ndarray      # pu voltage-squared per pu reactive power


def sensitivity_matrices(z_ohm: np.ndarray | Line, z_base: float = 1.0,
                         phases=PHASES) -> SensitivityMatrices:
    """Voltage-drop sensitivities of a line under the balanced-angle approximation."""
    if isinstance(z_ohm, Line):
        phases = z_ohm.phases
        z_ohm = z_ohm.z_ohm
    if not z_base or not math.isfinite(z_base):
        raise ValueError("base impedance must be finite and nonzero")
    z = np.asarray(z_ohm, dtype=complex)
    if z.shape != (3, 3):
        z = _embed(z, phases)
    if not np.all(np.isfinite(z)):
        raise ValueError("impedance entries must be finite")
    prod = GAMMA * np.conj(z / z_base)
    mp = -2.0 * prod.real
    mq = 2.0 * prod.imag
    mask = np.zeros(3, bool)
    mask[[PHASE_INDEX[p] for p in phases]] = True
    off = ~np.outer(mask, mask)
    mp[off] = 0.0
    mq[off] = 0.0
    return SensitivityMatrices(mp, mq)


def _embed(z, phases):
    z = np.atleast_2d(z)
    full = np.zeros((3, 3), complex)
    idx = [PHASE_INDEX[p] for p in phases]
    full[np.ix_(idx, idx)] = z
    return full


@dataclass
class FlowHandles:
    steps: int
    p_line: dict[tuple[str, str], list[int]] = field(default_factory=dict)   # (line, phase) -> ids
    q_line: dict[tuple[str, str], list[int]] = field(default_factory=dict)
    v: dict[tuple[str, str], list[int]] = field(default_factory=dict)        # (bus, phase) -> ids
    p_head: dict[str, list[int]] = field(default_factory=dict)               # phase -> ids
    q_head: dict[str, list[int]] = field(default_factory=dict)
    injection: dict[tuple[str, str], list[LinExpr]] = field(default_factory=dict)
    balance_rows: dict[tuple[str, str, str], list[int]] = field(default_factory=dict)  # (kind, bus, phase)
    voltage_rows: dict[tuple[str, str], list[int]] = field(default_factory=dict)       # (line, phase)

    @property
    def n_balance_rows(self) -> int:
        return sum(len(r) for r in self.balance_rows.values())

    @property
    def n_voltage_rows(self) -> int:
        return sum(len(r) for r in self.voltage_rows.values())


def build_lindistflow(model: Model, case: CaseFile, injections=None, replaced_loads=()) -> FlowHandles:
    """Add LinDistFlow variables and rows for every step of ``case``.

    ``injections`` maps (bus, phase) to a per-step list of extra net-injection
    expressions in kW (DER, storage).  Buses listed in ``replaced_loads`` do not
    contribute their constant real load; their injection expressions carry it.
    """
    feeder, series = case.feeder, case.series
    T = series.steps
    injections = injections or {}
    replaced = set(replaced_loads)
    h = FlowHandles(T)
    s_base = feeder.s_base_phase_kw
    inf = math.inf

    for b, p in feeder.node_phases():
        lo, hi = (1.0, 1.0) if b == feeder.substation else (feeder.v_min, feeder.v_max)
        h.v[(b, p)] = [model.add_variable(f"v[{b},{p},{t}]", lb=lo, ub=hi) for t in range(T)]
        d = series.loads.get((b, p), np.zeros(T))
        extra = injections.get((b, p))
        exprs = []
        for t in range(T):
            e = LinExpr(constant=0.0 if b in replaced else -float(d[t]))
            if extra is not None:
                e.add(extra[t])
            exprs.append(e)
        h.injection[(b, p)] = exprs
    for p in PHASES:
        if p not in feeder.buses[feeder.substation].phases:
            continue
        h.p_head[p] = [model.add_variable(f"P0[{p},{t}]", lb=-inf) for t in range(T)]
        h.q_head[p] = [model.add_variable(f"Q0[{p},{t}]", lb=-inf) for t in range(T)]
    for line in feeder.lines:
        for p in line.phases:
            h.p_line[(line.name, p)] = [model.add_variable(f"P[{line.name},{p},{t}]", lb=-inf)
                                        for t in range(T)]
            h.q_line[(line.name, p)] = [model.add_variable(f"Q[{line.name},{p},{t}]", lb=-inf)
                                        for t in range(T)]

    for b, p in feeder.node_phases():
        parent = feeder.parent_line(b)
        kids = [ln for ln in feeder.children(b) if p in ln.phases]
        qd = series.loads_q.get((b, p), np.zeros(T))
        prow, qrow = [], []
        for t in range(T):
            ep = h.injection[(b, p)][t].copy()
            eq = LinExpr(constant=-float(qd[t]))
            if parent is None:
                ep.add_term(h.p_head[p][t], 1.0)
                eq.add_term(h.q_head[p][t], 1.0)
            else:
                ep.add_term(h.p_line[(parent.name, p)][t], 1.0)
                eq.add_term(h.q_line[(parent.name, p)][t], 1.0)
            for ln in kids:
                ep.add_term(h.p_line[(ln.name, p)][t], -1.0)
                eq.add_term(h.q_line[(ln.name, p)][t], -1.0)
            prow.append(model.add_constraint(ep, "=", 0.0, name=f"balP[{b},{p},{t}]"))
            qrow.append(model.add_constraint(eq, "=", 0.0, name=f"balQ[{b},{p},{t}]"))
        h.balance_rows[("P", b, p)] = prow
        h.balance_rows[("Q", b, p)] = qrow

    for line in feeder.lines:
        sm = sensitivity_matrices(line, feeder.z_base)
        for p in line.phases:
            i = PHASE_INDEX[p]
            rows = []
            for t in range(T):
                e = LinExpr({h.v[(line.to_bus, p)][t]: 1.0, h.v[(line.from_bus, p)][t]: -1.0})
                for q in line.phases:
                    k = PHASE_INDEX[q]
                    e.add_term(h.p_line[(line.name, q)][t], -sm.mp[i, k] / s_base)
                    e.add_term(h.q_line[(line.name, q)][t], -sm.mq[i, k] / s_base)
                rows.append(model.add_constraint(e, "=", 0.0, name=f"volt[{line.name},{p},{t}]"))
            h.voltage_rows[(line.name, p)] = rows
    return h


@dataclass
class BalanceReport:
    max_balance: float
    max_voltage: float
    worst_balance: tuple | None
    worst_voltage: tuple | None
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_balance <= self.tol and self.max_voltage <= self.tol


def validate_power_balance(model: Model, handles: FlowHandles, x, tol: float = 1e-6) -> BalanceReport:
    """Residuals of the balance and voltage rows at point ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] < model.n_vars or not np.all(np.isfinite(x[:model.n_vars])):
        raise ValueError("solution does not cover every flow variable")

    def worst(rows_by_key):
        best, where = 0.0, None
        for key, rows in rows_by_key.items():
            for t, cid in enumerate(rows):
                con = model.constraints[cid]
                r = abs(con.expr.evaluate(x) - con.rhs)
                if r > best:
                    best, where = r, (*key, t)
        return best, where

    mb, wb = worst(handles.balance_rows)
    mv, wv = worst(handles.voltage_rows)
    return BalanceReport(mb, mv, wb, wv, tol)
