"""Generator for the bundled synthetic IEEE-13 planning case.

The topology and line impedances follow the IEEE 13-node test feeder.  Load,
price and PV series are synthetic: one representative week of hourly data
with commercial-style load shapes, clear-sky PV with day-to-day cloudiness
and a sinusoid-plus-noise wholesale price.  Equipment ratings are back-solved
so that peak loadings hit fixed overload targets.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

DATA_DIR = Path(__file__).parent / "data"
BUNDLED_CASE = DATA_DIR / "ieee13_synth.json"

# ohm/mile, IEEE 13-node configurations, full 3x3 (absent phases zero)
_CONFIGS = {
    "601": ([[0.3465, 0.1560, 0.1580], [0.1560, 0.3375, 0.1535], [0.1580, 0.1535, 0.3414]],
            [[1.0179, 0.5017, 0.4236], [0.5017, 1.0478, 0.3849], [0.4236, 0.3849, 1.0348]]),
    "602": ([[0.7526, 0.1580, 0.1560], [0.1580, 0.7475, 0.1535], [0.1560, 0.1535, 0.7436]],
            [[1.1814, 0.4236, 0.5017], [0.4236, 1.1983, 0.3849], [0.5017, 0.3849, 1.2112]]),
    "603": ([[0, 0, 0], [0, 1.3294, 0.2066], [0, 0.2066, 1.3238]],
            [[0, 0, 0], [0, 1.3471, 0.4591], [0, 0.4591, 1.3569]]),
    "604": ([[1.3238, 0, 0.2066], [0, 0, 0], [0.2066, 0, 1.3294]],
            [[1.3569, 0, 0.4591], [0, 0, 0], [0.4591, 0, 1.3471]]),
    "605": ([[0, 0, 0], [0, 0, 0], [0, 0, 1.3292]],
            [[0, 0, 0], [0, 0, 0], [0, 0, 1.3475]]),
    "606": ([[0.7982, 0.3192, 0.2849], [0.3192, 0.7891, 0.3192], [0.2849, 0.3192, 0.7982]],
            [[0.4463, 0.0328, -0.0143], [0.0328, 0.4041, 0.0328], [-0.0143, 0.0328, 0.4463]]),
    "607": ([[1.3425, 0, 0], [0, 0, 0], [0, 0, 0]],
            [[0.5124, 0, 0], [0, 0, 0], [0, 0, 0]]),
    # XFM-1 (500 kVA, 1.1 + j2 %) referred to the 4.16 kV side, expressed per mile of a 1-mile stub
    "xfm1": ([[0.3807, 0, 0], [0, 0.3807, 0], [0, 0, 0.3807]],
             [[0.6922, 0, 0], [0, 0.6922, 0], [0, 0, 0.6922]]),
}

# (from, to, phases, length ft, config)
_LINES = [
    ("650", "632", "abc", 2000, "601"),
    ("632", "633", "abc", 500, "602"),
    ("633", "634", "abc", 5280, "xfm1"),
    ("632", "645", "bc", 500, "603"),
    ("645", "646", "bc", 300, "603"),
    ("632", "671", "abc", 2000, "601"),
    ("671", "684", "ac", 300, "604"),
    ("684", "611", "c", 300, "605"),
    ("684", "652", "a", 800, "607"),
    ("671", "680", "abc", 1000, "601"),
    ("671", "692", "abc", 10, "601"),
    ("692", "675", "abc", 500, "606"),
]

_BUS_PHASES = {"650": "abc", "632": "abc", "633": "abc", "634": "abc", "645": "bc", "646": "bc",
               "671": "abc", "680": "abc", "684": "ac", "611": "c", "652": "a", "692": "abc",
               "675": "abc"}

# peak kW per phase before scaling; DER buses are phase-balanced
_SPOT_LOADS = {
    ("632", "a"): 17, ("632", "b"): 66, ("632", "c"): 117,
    ("634", "a"): 133, ("634", "b"): 133, ("634", "c"): 133,
    ("645", "b"): 170,
    ("646", "b"): 115, ("646", "c"): 115,
    ("652", "a"): 128,
    ("671", "a"): 385, ("671", "b"): 385, ("671", "c"): 385,
    ("675", "a"): 281, ("675", "b"): 281, ("675", "c"): 281,
    ("692", "c"): 170,
    ("611", "c"): 170,
}

TRANSFORMER_TARGETS = {"634": 1.43, "646": 1.11, "675": 1.67}
LINE_TARGETS = {"632-633": 1.10, "645-646": 1.10, "692-675": 1.10, "632-671": 1.10}
DER_BUSES = ("634", "646", "675")
BESS_BUSES = ("632", "634")

DAYS = 7
STEPS = 24 * DAYS
LOAD_SCALE = 0.35
PV_PEAK = 0.8
MONTHLY_DEMAND_PRICE = 50.0


def _commercial_shape(hour: np.ndarray) -> np.ndarray:
    """Occupied-building profile: night base, morning ramp, afternoon plateau."""
    h = hour % 24
    day = 0.45 + 0.55 * np.clip(np.sin(np.pi * (h - 6.0) / 14.0), 0.0, None) ** 0.7
    evening = np.where((h >= 17) & (h <= 20), 0.12 * np.sin(np.pi * (h - 16.0) / 5.0), 0.0)
    return np.minimum(day + evening, 1.0)


def _pv_shape(hour: np.ndarray) -> np.ndarray:
    h = hour % 24
    return np.clip(np.sin(np.pi * (h - 6.0) / 13.0), 0.0, None)


def generate(out_dir: str | Path = DATA_DIR, seed: int = 13) -> Path:
    """Write the case JSON and CSV series into ``out_dir``; returns the JSON path."""
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hours = np.arange(STEPS, dtype=float)
    day_idx = (hours // 24).astype(int)
    weekday = np.where(day_idx < 5, 1.0, 0.8)[day_idx]

    loads = {}
    for (bus, ph), peak in _SPOT_LOADS.items():
        noise = 1.0 + 0.03 * rng.standard_normal(STEPS)
        series = LOAD_SCALE * peak * _commercial_shape(hours) * weekday * noise
        loads[(bus, ph)] = series
    # DER buses: identical series on every phase so an equal split is exact
    for bus in DER_BUSES:
        phases = _BUS_PHASES[bus]
        avg = np.mean([loads[(bus, p)] for p in phases], axis=0)
        for p in phases:
            loads[(bus, p)] = avg.copy()

    clouds = np.clip(0.9 + 0.12 * rng.standard_normal(DAYS), 0.6, 1.0)
    pv = PV_PEAK * _pv_shape(hours) * clouds[day_idx]
    lmp = 0.04 + 0.015 * np.sin(2 * np.pi * (hours - 10.0) / 24.0) + 0.004 * rng.standard_normal(STEPS)
    lmp = np.clip(lmp, 0.005, None)

    def downstream(bus):
        kids = [t for f, t, *_ in _LINES if f == bus]
        out = [bus]
        for k in kids:
            out += downstream(k)
        return out

    def line_peak(to_bus, phases):
        flows = {p: np.zeros(STEPS) for p in phases}
        for b in downstream(to_bus):
            for p in phases:
                if (b, p) in loads:
                    flows[p] += loads[(b, p)]
        return max(float(f.max()) for f in flows.values())

    buses = []
    for bus, phases in _BUS_PHASES.items():
        entry = {"id": bus, "phases": phases}
        if bus in DER_BUSES:
            entry["der_candidate"] = True
        if bus in BESS_BUSES:
            entry["bess_candidate"] = True
        if bus in TRANSFORMER_TARGETS:
            peak = max(float(loads[(bus, p)].max()) for p in phases)
            rating = peak / TRANSFORMER_TARGETS[bus]
            entry["transformer"] = {"rating_kw": round(rating, 3),
                                    "upgrade_kw": round(1.6 * peak - rating, 3),
                                    "cost": 150000.0}
        buses.append(entry)

    lines = []
    for f, t, phases, length, cfg in _LINES:
        name = f"{f}-{t}"
        peak = line_peak(t, phases)
        entry = {"from": f, "to": t, "phases": phases, "length_ft": length, "config": cfg}
        if name in LINE_TARGETS:
            rating = peak / LINE_TARGETS[name]
            entry["rating_kw"] = round(rating, 3)
            entry["upgrade"] = {"delta_kw": round(1.6 * peak - rating, 3)}
        else:
            entry["rating_kw"] = round(max(2.0 * peak, 100.0), 3)
        lines.append(entry)

    doc = {
        "name": "ieee13_synth",
        "description": "IEEE 13-node topology with one synthetic representative week",
        "base": {"kv_ll": 4.16, "kva": 5000.0},
        "substation": "650",
        "voltage_bounds": [0.91, 1.1],
        "line_configs": {k: {"r_ohm_per_mile": r, "x_ohm_per_mile": x} for k, (r, x) in _CONFIGS.items()},
        "buses": buses,
        "lines": lines,
        "timeseries": {
            "steps": STEPS,
            "step_hours": 1.0,
            "loads_csv": "ieee13_loads.csv",
            "power_factor": 0.9,
            "production_csv": "ieee13_production.csv",
            "lmp_csv": "ieee13_lmp.csv",
            "demand_periods": day_idx.tolist(),
            "demand_prices": [round(MONTHLY_DEMAND_PRICE * 12.0 / DAYS, 6)] * DAYS,
            "annualization": 8760.0 / STEPS,
        },
        "economics": {
            "planner": {"r_e": 0.03, "r_c": 0.03, "r_wacc": 0.10, "n_years": 20,
                        "bess_kw_cost": 300.0, "bess_kwh_cost": 250.0, "efficiency": 0.96},
            "investor": {"r_e": 0.03, "r_c": 0.03, "ror": 0.15, "n_years": 20,
                         "der_kw_cost": 1600.0, "om_cost": 17.0, "import_price": 0.15,
                         "price_cap": 0.15},
        },
    }
    header = ["bus", "phase"] + [f"t{i}" for i in range(STEPS)]
    _write_csv(out_dir / "ieee13_loads.csv", header,
               [[b, p, *np.round(v, 4)] for (b, p), v in sorted(loads.items())])
    _write_csv(out_dir / "ieee13_production.csv", header,
               [[b, "-", *np.round(pv, 4)] for b in DER_BUSES])
    _write_csv(out_dir / "ieee13_lmp.csv", header, [["system", "-", *np.round(lmp, 5)]])
    path = out_dir / "ieee13_synth.json"
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:g}" if isinstance(v, float) else v for v in row])


if __name__ == "__main__":
    print(generate())


def toy_case(steps: int = 2, production=(0.8, 0.6), load_der: float = 10.0, load_far: float = 100.0,
             rating: float = 90.0, upgrade_cost: float = 100_000.0, bess: bool = False):
    """Single-phase three-bus feeder: substation -> DER site -> remote load.

    The first line is rated below the coincident peak, so the planner either
    upgrades it or buys exports from the DER site.
    """
    import hashlib

    from .network import (Bus, CaseFile, Economics, Feeder, InvestorEconomics, Line, LineUpgrade,
                          PlannerEconomics, TimeSeriesSet, validate_radial)

    z = np.zeros((3, 3), complex)
    z[0, 0] = 0.05 + 0.1j
    buses = {"s": Bus("s", ("a",)), "d": Bus("d", ("a",), der_candidate=True, bess_candidate=bess),
             "f": Bus("f", ("a",))}
    lines = [Line("s", "d", ("a",), 1000.0, z, rating, LineUpgrade(60.0, upgrade_cost)),
             Line("d", "f", ("a",), 500.0, z / 2)]
    feeder = Feeder(buses, lines, "s", kv_ll=4.16, kva_base=3000.0)
    validate_radial(feeder)
    prod = np.resize(np.asarray(production, dtype=float), steps)
    series = TimeSeriesSet(
        steps=steps, step_hours=1.0,
        loads={("d", "a"): np.full(steps, load_der), ("f", "a"): np.full(steps, load_far)},
        loads_q={("d", "a"): np.zeros(steps), ("f", "a"): np.zeros(steps)},
        lmp=np.full(steps, 0.04), production={"d": prod},
        period_of_step=np.zeros(steps, dtype=int), demand_prices=np.array([10.0]),
        annualization=HOURS_PER_YEAR / steps)
    econ = Economics(PlannerEconomics(), InvestorEconomics())
    key = f"toy:{steps}:{tuple(prod)}:{load_der}:{load_far}:{rating}:{upgrade_cost}:{bess}"
    return CaseFile("toy", feeder, series, econ, ["synthetic toy feeder"],
                    hashlib.sha256(key.encode()).hexdigest())


HOURS_PER_YEAR = 8760.0
