"""Feeder data model, case-file ingestion and overload screening."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

PHASES = ("a", "b", "c")
PHASE_INDEX = {p: i for i, p in enumerate(PHASES)}
LINE_COST_PER_FT = 200.0
LINE_COST_FIXED = 15_000.0
HOURS_PER_YEAR = 8760.0


class CaseError(ValueError):
    pass


class TopologyError(CaseError):
    def __init__(self, message, edges=(), buses=()):
        super().__init__(message)
        self.edges = list(edges)
        self.buses = list(buses)


@dataclass(frozen=True)
class Transformer:
    rating_kw: float
    upgrade_kw: float = 0.0
    cost: float = 150_000.0


@dataclass(frozen=True)
class Bus:
    id: str
    phases: tuple[str, ...]
    der_candidate: bool = False
    bess_candidate: bool = False
    transformer: Transformer | None = None
    site_cap_kw: float | None = None


@dataclass(frozen=True)
class LineUpgrade:
    delta_kw: float
    cost: float


@dataclass(frozen=True)
class Line:
    from_bus: str
    to_bus: str
    phases: tuple[str, ...]
    length_ft: float
    z_ohm: np.ndarray            # 3x3 complex, zero rows/cols for absent phases
    rating_kw: float = math.inf
    upgrade: LineUpgrade | None = None

    @property
    def name(self) -> str:
        return f"{self.from_bus}-{self.to_bus}"


@dataclass
class Feeder:
    buses: dict[str, Bus]
    lines: list[Line]
    substation: str
    v_min: float = 0.91
    v_max: float = 1.1
    kv_ll: float = 4.16
    kva_base: float = 5000.0

    def __post_init__(self):
        self._children: dict[str, list[Line]] = {b: [] for b in self.buses}
        self._parent: dict[str, Line] = {}
        for line in self.lines:
            if line.from_bus in self._children:
                self._children[line.from_bus].append(line)
            self._parent.setdefault(line.to_bus, line)

    @property
    def z_base(self) -> float:
        return self.kv_ll ** 2 * 1000.0 / self.kva_base

    @property
    def s_base_phase_kw(self) -> float:
        return self.kva_base / 3.0

    def children(self, bus: str) -> list[Line]:
        return self._children[bus]

    def parent_line(self, bus: str) -> Line | None:
        return self._parent.get(bus)

    def order(self) -> list[str]:
        """Buses in breadth-first order from the substation."""
        seen, out, queue = {self.substation}, [], deque([self.substation])
        while queue:
            b = queue.popleft()
            out.append(b)
            for line in self._children.get(b, []):
                if line.to_bus not in seen:
                    seen.add(line.to_bus)
                    queue.append(line.to_bus)
        return out

    def downstream(self, bus: str) -> list[str]:
        out, stack = [], [bus]
        while stack:
            b = stack.pop()
            out.append(b)
            stack.extend(line.to_bus for line in self._children.get(b, []))
        return out

    def node_phases(self) -> list[tuple[str, str]]:
        return [(b, p) for b in self.order() for p in self.buses[b].phases]

    @property
    def der_buses(self) -> list[str]:
        return [b for b in self.order() if self.buses[b].der_candidate]

    @property
    def bess_buses(self) -> list[str]:
        return [b for b in self.order() if self.buses[b].bess_candidate]


@dataclass
class TimeSeriesSet:
    steps: int
    step_hours: float
    loads: dict[tuple[str, str], np.ndarray]          # kW per (bus, phase)
    loads_q: dict[tuple[str, str], np.ndarray]        # kvar per (bus, phase)
    lmp: np.ndarray                                   # $/kWh
    production: dict[str, np.ndarray]                 # 0..1 per DER bus
    period_of_step: np.ndarray                        # step -> demand period
    demand_prices: np.ndarray                         # $/kW per period
    annualization: float = 1.0                        # horizon repetitions per year

    @property
    def n_periods(self) -> int:
        return len(self.demand_prices)

    def bus_load(self, bus: str, phases) -> np.ndarray:
        total = np.zeros(self.steps)
        for p in phases:
            total += self.loads.get((bus, p), 0.0)
        return total

    def head(self, horizon: int) -> "TimeSeriesSet":
        if not 1 <= horizon <= self.steps:
            raise CaseError(f"horizon {horizon} outside 1..{self.steps}")
        periods = self.period_of_step[:horizon]
        used = sorted(set(int(s) for s in periods))
        remap = {s: i for i, s in enumerate(used)}
        return replace(
            self, steps=horizon,
            loads={k: v[:horizon] for k, v in self.loads.items()},
            loads_q={k: v[:horizon] for k, v in self.loads_q.items()},
            lmp=self.lmp[:horizon],
            production={k: v[:horizon] for k, v in self.production.items()},
            period_of_step=np.array([remap[int(s)] for s in periods], dtype=int),
            # surviving periods stand in for the dropped ones
            demand_prices=self.demand_prices[used] * self.n_periods / len(used),
            annualization=self.annualization * self.steps / horizon)


@dataclass(frozen=True)
class PlannerEconomics:
    r_e: float = 0.03
    r_c: float = 0.03
    r_wacc: float = 0.10
    n_years: int = 20
    bess_kw_cost: float = 300.0
    bess_kwh_cost: float = 250.0
    efficiency: float = 0.96


@dataclass(frozen=True)
class InvestorEconomics:
    r_e: float = 0.03
    r_c: float = 0.03
    ror: float = 0.15
    n_years: int = 20
    der_kw_cost: float = 1600.0
    om_cost: float = 17.0
    import_price: float = 0.15
    price_cap: float = 0.15


@dataclass(frozen=True)
class Economics:
    planner: PlannerEconomics
    investor: InvestorEconomics


@dataclass
class CaseFile:
    name: str
    feeder: Feeder
    series: TimeSeriesSet
    economics: Economics
    provenance: list[str] = field(default_factory=list)
    digest: str = ""

    def with_horizon(self, horizon: int | None) -> "CaseFile":
        if horizon is None or horizon == self.series.steps:
            return self
        out = replace(self, series=self.series.head(horizon),
                      provenance=self.provenance + [f"horizon truncated to first {horizon} steps; "
                                                    "annualization rescaled"])
        out.digest = hashlib.sha256(f"{self.digest}:{horizon}".encode()).hexdigest()
        return out

    def site_cap(self, bus: str) -> float:
        cap = self.feeder.buses[bus].site_cap_kw
        if cap is None:
            cap = 2.0 * float(self.series.bus_load(bus, self.feeder.buses[bus].phases).max())
        return cap


# --- validation -------------------------------------------------------------

def validate_radial(feeder: Feeder) -> None:
    """Raise :class:`TopologyError` unless lines form a spanning tree from the substation."""
    parent = {b: b for b in feeder.buses}

    def find(b):
        while parent[b] != b:
            parent[b] = parent[parent[b]]
            b = parent[b]
        return b

    for line in feeder.lines:
        for b in (line.from_bus, line.to_bus):
            if b not in feeder.buses:
                raise TopologyError(f"line {line.name} references unknown bus {b!r}",
                                    edges=[line.name], buses=[b])
        ra, rb = find(line.from_bus), find(line.to_bus)
        if ra == rb:
            raise TopologyError(f"cycle closed by line {line.name}", edges=[line.name])
        parent[ra] = rb
    if feeder.substation not in feeder.buses:
        raise TopologyError(f"substation {feeder.substation!r} is not a bus", buses=[feeder.substation])
    root = find(feeder.substation)
    cut = sorted(b for b in feeder.buses if find(b) != root)
    if cut:
        raise TopologyError(f"buses disconnected from substation: {cut}", buses=cut)
    # orientation: every non-substation bus has exactly one incoming line
    incoming: dict[str, int] = {}
    for line in feeder.lines:
        incoming[line.to_bus] = incoming.get(line.to_bus, 0) + 1
    if incoming.get(feeder.substation):
        raise TopologyError("substation has an incoming line", buses=[feeder.substation])
    reach = set(feeder.order())
    bad = sorted(set(feeder.buses) - reach)
    if bad:
        raise TopologyError(f"lines are not oriented away from the substation at {bad}", buses=bad)
    for line in feeder.lines:
        for end in (line.from_bus, line.to_bus):
            if not set(line.phases) <= set(feeder.buses[end].phases):
                raise CaseError(f"line {line.name} phases {line.phases} not present at bus {end}")
    for bus in feeder.order():
        if bus == feeder.substation:
            continue
        line = feeder.parent_line(bus)
        if not set(feeder.buses[bus].phases) <= set(line.phases):
            raise CaseError(f"bus {bus} phases {feeder.buses[bus].phases} not energized by {line.name}")


# --- loading -------------------------------------------------------------------

def _read_series_csv(path: Path, steps: int) -> dict[tuple[str, str], np.ndarray]:
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["bus", "phase"]:
            raise CaseError(f"{path.name}: header must start with bus,phase")
        if len(header) - 2 != steps:
            raise CaseError(f"{path.name}: {len(header) - 2} steps, expected {steps}")
        for row in reader:
            if not row:
                continue
            vals = np.array([float(v) for v in row[2:]])
            if len(vals) != steps:
                raise CaseError(f"{path.name}: series {row[0]}/{row[1]} has length {len(vals)}, expected {steps}")
            out[(row[0], row[1])] = vals
    return out


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise CaseError(f"{where}: missing required field {key!r}")
    return doc[key]


def _impedance(zdef: dict, phases, length_ft: float, where: str) -> np.ndarray:
    r = np.asarray(_require(zdef, "r_ohm_per_mile", where), dtype=float)
    x = np.asarray(_require(zdef, "x_ohm_per_mile", where), dtype=float)
    if r.shape != (3, 3) or x.shape != (3, 3):
        raise CaseError(f"{where}: impedance matrices must be 3x3")
    z = (r + 1j * x) * (length_ft / 5280.0)
    if not np.allclose(z, z.T):
        raise CaseError(f"{where}: impedance matrix not symmetric")
    mask = np.array([p in phases for p in PHASES])
    z = z * np.outer(mask, mask)
    return z


def load_case(path: str | Path) -> CaseFile:
    path = Path(path)
    raw = path.read_bytes()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CaseError(f"{path.name}: invalid JSON ({exc})") from exc
    prov: list[str] = []
    name = doc.get("name", path.stem)
    base = doc.get("base", {})
    kv = float(base.get("kv_ll", 4.16))
    kva = float(base.get("kva", 5000.0))
    if kv <= 0 or kva <= 0:
        raise CaseError("base voltage and power must be positive")

    buses: dict[str, Bus] = {}
    for b in _require(doc, "buses", "case"):
        bid = str(_require(b, "id", "bus"))
        phases = tuple(p for p in PHASES if p in b.get("phases", "abc"))
        trf = None
        if b.get("transformer"):
            t = b["transformer"]
            rating = float(_require(t, "rating_kw", f"bus {bid} transformer"))
            if rating <= 0:
                raise CaseError(f"bus {bid}: transformer rating must be positive")
            trf = Transformer(rating, float(t.get("upgrade_kw", 0.0)), float(t.get("cost", 150_000.0)))
        cap = b.get("site_cap_kw")
        if cap is not None and float(cap) <= 0:
            raise CaseError(f"bus {bid}: site cap must be positive")
        if bid in buses:
            raise CaseError(f"duplicate bus id {bid!r}")
        buses[bid] = Bus(bid, phases, bool(b.get("der_candidate", False)),
                         bool(b.get("bess_candidate", False)), trf,
                         None if cap is None else float(cap))

    configs = doc.get("line_configs", {})
    lines = []
    for ln in _require(doc, "lines", "case"):
        fb, tb = str(_require(ln, "from", "line")), str(_require(ln, "to", "line"))
        where = f"line {fb}-{tb}"
        for end in (fb, tb):
            if end not in buses:
                raise CaseError(f"{where}: unknown bus reference {end!r}")
        phases = tuple(p for p in PHASES if p in ln.get("phases", "abc"))
        length = float(ln.get("length_ft", 0.0))
        zspec = ln.get("impedance") or configs.get(str(ln.get("config")))
        if zspec is None:
            raise CaseError(f"{where}: no impedance or known config")
        z = _impedance(zspec, phases, length, where)
        rating = float(ln.get("rating_kw", math.inf))
        if rating <= 0:
            raise CaseError(f"{where}: rating must be positive")
        upg = None
        if ln.get("upgrade"):
            u = ln["upgrade"]
            cost = u.get("cost")
            if cost is None:
                cost = length * LINE_COST_PER_FT + LINE_COST_FIXED
            upg = LineUpgrade(float(_require(u, "delta_kw", where)), float(cost))
        lines.append(Line(fb, tb, phases, length, z, rating, upg))

    vb = doc.get("voltage_bounds")
    if vb is None:
        vb = (0.91, 1.1)
        prov.append("voltage bounds defaulted to [0.91, 1.1] pu^2")
    feeder = Feeder(buses, lines, str(_require(doc, "substation", "case")),
                    float(vb[0]), float(vb[1]), kv, kva)
    validate_radial(feeder)

    ts = _require(doc, "timeseries", "case")
    steps = int(_require(ts, "steps", "timeseries"))
    step_hours = float(ts.get("step_hours", 1.0))
    base_dir = path.parent
    loads = _read_series_csv(base_dir / _require(ts, "loads_csv", "timeseries"), steps)
    for (bus, ph) in loads:
        if bus not in buses:
            raise CaseError(f"load series references unknown bus {bus!r}")
        if ph not in buses[bus].phases:
            raise CaseError(f"load series for {bus}/{ph}: phase not present")
    if ts.get("loads_q_csv"):
        loads_q = _read_series_csv(base_dir / ts["loads_q_csv"], steps)
    else:
        pf = float(ts.get("power_factor", 0.9))
        k = math.tan(math.acos(pf))
        loads_q = {key: val * k for key, val in loads.items()}
        prov.append(f"reactive loads derived from power factor {pf}")
    prod_raw = _read_series_csv(base_dir / _require(ts, "production_csv", "timeseries"), steps)
    production = {bus: v for (bus, _), v in prod_raw.items()}
    for bus, v in production.items():
        if bus not in buses:
            raise CaseError(f"production series references unknown bus {bus!r}")
        if np.any(v < 0) or np.any(v > 1):
            raise CaseError(f"production factor for {bus} outside [0, 1]")
    for bus in buses.values():
        if bus.der_candidate and bus.id not in production:
            raise CaseError(f"DER candidate {bus.id} lacks a production series")
    lmp_raw = _read_series_csv(base_dir / _require(ts, "lmp_csv", "timeseries"), steps)
    if len(lmp_raw) != 1:
        raise CaseError("lmp file must hold exactly one series")
    lmp = next(iter(lmp_raw.values()))

    periods = ts.get("demand_periods")
    if periods is None:
        hours = np.arange(steps) * step_hours
        periods = np.minimum((hours / (HOURS_PER_YEAR / 12.0)).astype(int), 11)
        prov.append("demand periods defaulted to 12 calendar months")
    periods = np.asarray(periods, dtype=int)
    if periods.shape != (steps,):
        raise CaseError(f"demand period map has length {len(periods)}, expected {steps}")
    n_periods = int(periods.max()) + 1
    prices = ts.get("demand_prices", 50.0)
    prices = np.full(n_periods, float(prices)) if np.isscalar(prices) else np.asarray(prices, dtype=float)
    if prices.shape != (n_periods,):
        raise CaseError("demand_prices must give one price per period")
    annual = ts.get("annualization")
    if annual is None:
        annual = HOURS_PER_YEAR / (steps * step_hours)
        prov.append(f"annualization weight defaulted to {annual:.6g} (horizon scaled to a year)")
    series = TimeSeriesSet(steps, step_hours, loads, loads_q, lmp, production, periods, prices,
                           float(annual))

    econ_doc = doc.get("economics", {})
    planner = PlannerEconomics(**econ_doc.get("planner", {}))
    inv_doc = dict(econ_doc.get("investor", {}))
    if "price_cap" not in inv_doc:
        inv_doc["price_cap"] = inv_doc.get("import_price", InvestorEconomics.import_price)
        prov.append(f"price-signal cap defaulted to investor import price {inv_doc['price_cap']}")
    investor = InvestorEconomics(**inv_doc)
    for label, e in (("planner", planner), ("investor", investor)):
        rates = [e.r_e, e.r_c, e.r_wacc if label == "planner" else e.ror]
        if any(not 0 <= r < 1 for r in rates):
            raise CaseError(f"{label} rates must lie in [0, 1)")
        if e.n_years < 1:
            raise CaseError(f"{label} n_years must be >= 1")
    if not 0 < planner.efficiency <= 1:
        raise CaseError("BESS efficiency must lie in (0, 1]")

    case = CaseFile(name, feeder, series, Economics(planner, investor), prov,
                    hashlib.sha256(raw).hexdigest())
    for bus in feeder.der_buses:
        if buses[bus].site_cap_kw is None:
            prov.append(f"site cap at {bus} defaulted to 2x peak demand ({case.site_cap(bus):.1f} kW)")
    return case


# --- screening -----------------------------------------------------------

@dataclass(frozen=True)
class OverloadItem:
    component: str
    kind: str           # "transformer" | "line"
    peak_kw: float
    rating_kw: float
    percent: float

    @property
    def overloaded(self) -> bool:
        return self.percent > 100.0 + 1e-9


def downstream_load(case: CaseFile, bus: str) -> dict[str, np.ndarray]:
    """Per-phase coincident load at and below ``bus`` (lossless)."""
    feeder, series = case.feeder, case.series
    out = {p: np.zeros(series.steps) for p in PHASES}
    for b in feeder.downstream(bus):
        for p in feeder.buses[b].phases:
            if (b, p) in series.loads:
                out[p] = out[p] + series.loads[(b, p)]
    return out


def overload_report(case: CaseFile) -> list[OverloadItem]:
    feeder, series = case.feeder, case.series
    items = []
    for bus in feeder.order():
        trf = feeder.buses[bus].transformer
        if trf is None:
            continue
        peak = max(float(np.abs(series.loads.get((bus, p), np.zeros(1))).max())
                   for p in feeder.buses[bus].phases)
        items.append(OverloadItem(bus, "transformer", peak, trf.rating_kw, 100.0 * peak / trf.rating_kw))
    for line in feeder.lines:
        if not math.isfinite(line.rating_kw):
            continue
        flows = downstream_load(case, line.to_bus)
        peak = max(float(np.abs(flows[p]).max()) for p in line.phases)
        items.append(OverloadItem(line.name, "line", peak, line.rating_kw, 100.0 * peak / line.rating_kw))
    return items
