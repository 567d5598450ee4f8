import numpy as np
import pytest

from conftest import two_bus_case
from nwaplan.model import LinExpr, Model
from nwaplan.network import Transformer
from nwaplan.planner import (OBJECTIVE_PARTS, assemble_planner_objective, build_bess, build_head_costs,
                             build_price_signal, build_upgrades, investor_pwf, planner_pwf, pwf)
from nwaplan.powerflow import build_lindistflow
from nwaplan.solve.solution import INFEASIBLE, OPTIMAL, SolverConfig, solve_model
from nwaplan.synth import toy_case

INTERNAL = SolverConfig(backend="internal", gap=1e-9)


def geometric_pwf(r_e, r_c, d, n):
    """Closed-form geometric series, independent of the term-by-term sum."""
    q = (1 + r_e) * (1 + r_c) / (1 + d)
    return n if q == 1 else q * (1 - q ** n) / (1 - q)


def test_pwf_trivial():
    assert pwf(0, 0, 0, 1) == 1.0


@pytest.mark.parametrize("d, expected", [(0.15, 9.534), (0.10, 13.977)])
def test_pwf_reference_values(d, expected):
    val = pwf(0.03, 0.03, d, 20)
    assert val == pytest.approx(expected, abs=1e-3)
    assert val == pytest.approx(geometric_pwf(0.03, 0.03, d, 20), rel=1e-13)


def test_pwf_case_defaults(bundled_case):
    assert planner_pwf(bundled_case) == pytest.approx(13.977, abs=1e-3)
    assert investor_pwf(bundled_case) == pytest.approx(9.534, abs=1e-3)


@pytest.mark.parametrize("args", [(0, 0, -1.0, 5), (0, 0, 0.1, 0)])
def test_pwf_domain(args):
    with pytest.raises(ValueError):
        pwf(*args)


# --- storage -----------------------------------------------------------------

def bess_model(steps=3):
    case = toy_case(steps=steps, bess=True)
    model = Model()
    h = build_bess(model, case)
    return case, model, h, ("d", "a")


def test_soc_recursion_arithmetic():
    case, model, h, key = bess_model(3)
    model.set_bounds(h.kwh[key], 100.0, 100.0)
    model.set_bounds(h.kw[key], 50.0, 50.0)
    model.set_bounds(h.charge[key][0], 10.0, 10.0)
    model.set_bounds(h.discharge[key][0], 0.0, 0.0)
    model.set_bounds(h.charge[key][1], 0.0, 0.0)
    model.set_bounds(h.discharge[key][1], 9.6, 9.6)
    x = solve_model(model, INTERNAL).x
    soc = x[h.soc[key]]
    assert soc[0] == pytest.approx(50.0)
    assert soc[1] == pytest.approx(59.6)
    assert soc[1] - soc[2] == pytest.approx(10.0)
    assert soc[3] == pytest.approx(50.0)


def test_inverter_limit_binds():
    case, model, h, key = bess_model(2)
    model.set_bounds(h.kw[key], 5.0, 5.0)
    model.set_bounds(h.kwh[key], 100.0, 100.0)
    model.set_bounds(h.charge[key][0], 6.0, 6.0)
    assert solve_model(model, INTERNAL).status == INFEASIBLE


def test_bess_capex_example():
    case, model, h, key = bess_model(2)
    x = np.zeros(model.n_vars)
    x[h.kw[key]], x[h.kwh[key]] = 10.0, 40.0
    assert h.capex.evaluate(x) == 13_000.0


def test_bess_rows_per_phase(bundled_case):
    case = bundled_case.with_horizon(4)
    model = Model()
    h = build_bess(model, case)
    assert len(h.kw) == 6           # two three-phase candidates
    assert all(len(s) == 5 for s in h.soc.values())


# --- upgrades ------------------------------------------------------------------

def upgrade_model(load_kw):
    case = two_bus_case(load_kw=load_kw, transformer=Transformer(500.0, 300.0, 150_000.0))
    model = Model()
    flows = build_lindistflow(model, case)
    up = build_upgrades(model, case, flows)
    return model, up


@pytest.mark.parametrize("load, z, feasible", [(500, 0, True), (501, 0, False), (800, 1, True),
                                               (801, 1, False), (715, 0, False)])
def test_upgrade_limits(load, z, feasible):
    model, up = upgrade_model(load)
    model.set_bounds(up.transformer["1"], z, z)
    status = solve_model(model, INTERNAL).status
    assert (status == OPTIMAL) == feasible


def test_upgrade_limits_symmetric():
    model, up = upgrade_model(-600)
    model.set_bounds(up.transformer["1"], 0, 0)
    assert solve_model(model, INTERNAL).status == INFEASIBLE


def test_forced_upgrade_when_needed():
    model, up = upgrade_model(715)
    model.set_objective(up.transformer_cost)
    sol = solve_model(model, INTERNAL)
    assert sol.x[up.transformer["1"]] == 1.0 and sol.objective == 150_000.0


# --- feeder head costs ---------------------------------------------------------

def head_model(loads, lmp=0.05):
    case = two_bus_case(load_kw=0.0, steps=len(loads))
    case.series.loads[("1", "a")] = np.asarray(loads, dtype=float)
    case.series.lmp[:] = lmp
    model = Model()
    flows = build_lindistflow(model, case)
    head = build_head_costs(model, case, flows, 1.0)
    model.set_objective(head.energy + head.demand)
    return model, head, solve_model(model, INTERNAL).x


def test_export_step_costs_nothing():
    _, head, x = head_model([-50.0])
    assert head.energy.evaluate(x) == pytest.approx(0.0)
    assert x[head.p_plus["a"][0]] == pytest.approx(0.0)


def test_energy_cost_per_step():
    _, head, x = head_model([120.0])
    assert head.energy.evaluate(x) == pytest.approx(6.0)


def test_peak_demand_in_period():
    _, head, x = head_model([90.0, 110.0])
    assert x[head.p_max[0]] == pytest.approx(110.0)
    assert head.demand.evaluate(x) == pytest.approx(10.0 * 110.0)


# --- objective -------------------------------------------------------------------

def test_objective_zero_at_zero():
    case = two_bus_case(load_kw=0.0)
    model = Model()
    flows = build_lindistflow(model, case)
    head = build_head_costs(model, case, flows, 13.977)
    parts = {k: LinExpr() for k in OBJECTIVE_PARTS}
    parts["energy"], parts["demand"] = head.energy, head.demand
    obj = assemble_planner_objective(model, parts)
    assert obj.evaluate(solve_model(model, INTERNAL).x) == pytest.approx(0.0)


def test_transformer_upgrade_adds_cost():
    model, up = upgrade_model(100)
    parts = {k: LinExpr() for k in OBJECTIVE_PARTS}
    parts["transformers"] = up.transformer_cost
    obj = assemble_planner_objective(model, parts)
    x = np.zeros(model.n_vars)
    x[up.transformer["1"]] = 1.0
    assert obj.evaluate(x) == 150_000.0


def test_missing_part():
    with pytest.raises(ValueError, match="der_payment"):
        assemble_planner_objective(Model(), {k: LinExpr() for k in OBJECTIVE_PARTS[:-1]})


def test_price_signal_bounds():
    case = toy_case()
    model = Model()
    ps = build_price_signal(model, case, [("d", 0), ("d", 1)])
    assert ps.cap == case.economics.investor.import_price == 0.15
    assert all(model.variables[v].lb == 0.0 and model.variables[v].ub == 0.15 for v in ps.ids)
    grid = ps.as_array(np.arange(model.n_vars, dtype=float), ["d"], 2)
    assert grid.tolist() == [[0.0, 1.0]]
