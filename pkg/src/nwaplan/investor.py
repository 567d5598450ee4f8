"""Lower-level DER investor: capacity purchase and hourly import/export.

The LP is built directly in equality-plus-bounds form.  Energy columns are
in annualized kWh per step (kW x step hours x horizon repetitions per year),
so the cost coefficients already carry the investor's present worth factor.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .model import StandardLp
from .network import CaseFile
from .planner import investor_pwf
from .solve.simplex import SimplexOptions, simplex

log = logging.getLogger(__name__)

ROLES = ("capacity", "import", "export", "der", "spill")


@dataclass
class LowerLevelForm:
    """``min (c + B x)' y  s.t.  V y = w,  lb <= y <= ub`` with price vector ``x``."""
    c: np.ndarray
    V: np.ndarray
    w: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    B: np.ndarray                                   # (n_cols, n_prices)
    col_names: list[str]
    row_names: list[str]
    roles: dict[str, list[int]] = field(default_factory=dict)
    price_keys: list[tuple[str, int]] = field(default_factory=list)
    export_col: dict[tuple[str, int], int] = field(default_factory=dict)
    import_col: dict[tuple[str, int], int] = field(default_factory=dict)
    balance_row: dict[tuple[str, int], int] = field(default_factory=dict)
    capacity_col: dict[str, int] = field(default_factory=dict)
    buses: list[str] = field(default_factory=list)
    pwf_ll: float = 1.0
    step_energy: float = 1.0                        # annualized kWh per kW per step

    @property
    def n_cols(self) -> int:
        return len(self.c)

    @property
    def n_rows(self) -> int:
        return len(self.w)

    @property
    def v_export(self) -> float:
        """Common coefficient of export columns in their balance rows."""
        vals = {float(self.V[self.balance_row[k], j]) for k, j in self.export_col.items()}
        if len(vals) != 1:
            raise ValueError(f"export columns carry heterogeneous balance coefficients {sorted(vals)}")
        v = vals.pop()
        if v == 0.0:
            raise ValueError("export coefficient is zero")
        return v

    def gradient(self, x_price) -> np.ndarray:
        if self.B.shape[1] == 0:
            return self.c.copy()
        return self.c + self.B @ np.asarray(x_price, dtype=float)

    def check(self) -> None:
        if not (np.all(np.isfinite(self.lb)) and np.all(np.isfinite(self.ub))):
            raise ValueError("lower-level bounds must be finite")
        for j in range(self.n_cols):
            if np.any(self.B[j] != 0) and j not in self.roles.get("export", []):
                raise ValueError(f"coupling on non-export column {self.col_names[j]}")

    def as_standard_lp(self, x_price=None) -> StandardLp:
        n = self.n_cols
        x_price = np.zeros(self.B.shape[1]) if x_price is None else x_price
        return StandardLp(self.gradient(x_price), self.V, self.w, self.lb, self.ub,
                          var_of_col=list(range(n)), col_of_var={j: j for j in range(n)},
                          row_of_con=list(range(self.n_rows)), slack_rows=[],
                          objective_constant=0.0, col_names=list(self.col_names),
                          row_names=list(self.row_names))


def build_investor_lp(case: CaseFile) -> LowerLevelForm:
    """Assemble the investor LP for every DER candidate bus of ``case``."""
    feeder, series = case.feeder, case.series
    econ = case.economics.investor
    buses = feeder.der_buses
    if not buses:
        raise ValueError("case has no DER candidate buses")
    b_ll = investor_pwf(case)
    T = series.steps
    he = series.step_hours * series.annualization
    cols: list[tuple[str, str, float, float, float]] = []     # name, role, cost, lb, ub
    rows: list[str] = []
    entries: list[tuple[int, int, float]] = []
    w: list[float] = []
    llf_maps = dict(export_col={}, import_col={}, balance_row={}, capacity_col={})
    price_keys = []

    def col(name, role, cost, lb, ub):
        cols.append((name, role, cost, lb, ub))
        return len(cols) - 1

    for b in buses:
        if b not in series.production:
            raise ValueError(f"DER bus {b} lacks a production series")
        cap = case.site_cap(b)
        if not cap > 0:
            raise ValueError(f"site cap at {b} must be positive")
        f = np.asarray(series.production[b], dtype=float)
        load = series.bus_load(b, feeder.buses[b].phases)
        imp_cap = max(float(load.max()), 0.0) * he
        kw = col(f"ykW[{b}]", "capacity", econ.der_kw_cost + b_ll * econ.om_cost, 0.0, cap)
        llf_maps["capacity_col"][b] = kw
        for t in range(T):
            imp = col(f"yIMP[{b},{t}]", "import", b_ll * econ.import_price, 0.0, imp_cap)
            exp = col(f"yEXP[{b},{t}]", "export", 0.0, 0.0, cap * he)
            der = col(f"yDER[{b},{t}]", "der", 0.0, 0.0, cap * he if f[t] > 0 else 0.0)
            r = len(rows)
            rows.append(f"bal[{b},{t}]")
            entries += [(r, imp, 1.0), (r, exp, -1.0), (r, der, 1.0)]
            w.append(float(load[t]) * he)
            llf_maps["export_col"][(b, t)] = exp
            llf_maps["import_col"][(b, t)] = imp
            llf_maps["balance_row"][(b, t)] = r
            price_keys.append((b, t))
            if f[t] > 0:
                spill = col(f"ySPILL[{b},{t}]", "spill", 0.0, 0.0, cap * he)
                r = len(rows)
                rows.append(f"prod[{b},{t}]")
                entries += [(r, der, 1.0), (r, spill, 1.0), (r, kw, -float(f[t]) * he)]
                w.append(0.0)

    n, m = len(cols), len(rows)
    V = np.zeros((m, n))
    for r, j, v in entries:
        V[r, j] += v
    B = np.zeros((n, len(price_keys)))
    for p, key in enumerate(price_keys):
        B[llf_maps["export_col"][key], p] = -b_ll
    roles = {r: [] for r in ROLES}
    for j, (_, role, *_rest) in enumerate(cols):
        roles[role].append(j)
    llf = LowerLevelForm(
        c=np.array([c[2] for c in cols]), V=V, w=np.array(w),
        lb=np.array([c[3] for c in cols]), ub=np.array([c[4] for c in cols]), B=B,
        col_names=[c[0] for c in cols], row_names=rows, roles=roles, price_keys=price_keys,
        buses=list(buses), pwf_ll=b_ll, step_energy=he, **llf_maps)
    llf.check()
    return llf


@dataclass
class InvestorResult:
    net_present_cost: float
    capex: float
    om: float
    energy_cost: float
    income: float
    capacity_kw: dict[str, float]
    no_der_cost: float = 0.0

    @property
    def savings(self) -> float:
        return self.no_der_cost - self.net_present_cost

    def as_dict(self) -> dict:
        return {"net_present_cost": self.net_present_cost, "capex": self.capex, "om": self.om,
                "energy_cost": self.energy_cost, "income": self.income, "savings": self.savings,
                "no_der_cost": self.no_der_cost, "capacity_kw": dict(self.capacity_kw)}


def decompose(case: CaseFile, llf: LowerLevelForm, y, x_price=None) -> InvestorResult:
    """Split the investor objective at ``y`` into capex, O&M, imports and export income."""
    econ = case.economics.investor
    y = np.asarray(y, dtype=float)
    x_price = np.zeros(len(llf.price_keys)) if x_price is None else np.asarray(x_price, dtype=float)
    cap = {b: float(y[j]) for b, j in llf.capacity_col.items()}
    capex = econ.der_kw_cost * sum(cap.values())
    om = llf.pwf_ll * econ.om_cost * sum(cap.values())
    imports = math.fsum(llf.c[j] * y[j] for j in llf.roles["import"])
    income = math.fsum(llf.pwf_ll * x_price[p] * y[llf.export_col[k]]
                       for p, k in enumerate(llf.price_keys))
    no_der = llf.pwf_ll * econ.import_price * math.fsum(
        llf.w[llf.balance_row[k]] for k in llf.price_keys)
    return InvestorResult(capex + om + imports - income, capex, om, imports, income, cap, no_der)


def solve_lower_level(llf: LowerLevelForm, x_price=None, options: SimplexOptions | None = None):
    """Solve the investor LP for a fixed price vector with the internal simplex."""
    res = simplex(llf.as_standard_lp(x_price), options)
    if res.status != "optimal":
        raise RuntimeError(f"investor LP {res.status}")
    return res


def solve_no_signal(case: CaseFile, llf: LowerLevelForm | None = None) -> InvestorResult:
    """Investor optimum when exports earn nothing."""
    llf = llf or build_investor_lp(case)
    res = solve_lower_level(llf)
    return decompose(case, llf, res.x[:llf.n_cols])
