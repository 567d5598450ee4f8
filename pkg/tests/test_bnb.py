import itertools
import math
import sys

import numpy as np
import pytest

from nwaplan.lpfile import write_solution
from nwaplan.model import BINARY, LinExpr, Model
from nwaplan.solve.bnb import branch_and_bound
from nwaplan.solve.external import SolverLaunchError, SolverOutputError, solve_external
from nwaplan.solve.highs import solve_highs
from nwaplan.solve.oracle import enumerate_binaries
from nwaplan.solve.simplex import simplex
from nwaplan.model import standard_form
from nwaplan.solve.solution import INFEASIBLE, OPTIMAL, SolverConfig, solve_model

EXACT = SolverConfig(backend="internal", gap=1e-9)


def knapsack() -> Model:
    """max 10 z0 + 13 z1 + 7 z2 + x  s.t.  4 z0 + 6 z1 + 3 z2 + x <= 9.5,  x <= 1."""
    m = Model("knap")
    z = [m.add_variable(f"z{k}", BINARY, 0, 1) for k in range(3)]
    x = m.add_variable("x", ub=1.0)
    m.add_constraint(LinExpr({z[0]: 4, z[1]: 6, z[2]: 3, x: 1}), "<=", 9.5, name="cap")
    m.set_objective(LinExpr({z[0]: -10, z[1]: -13, z[2]: -7, x: -1}))
    return m


def knapsack_by_hand() -> float:
    best = math.inf
    for a, b, c in itertools.product((0, 1), repeat=3):
        room = 9.5 - 4 * a - 6 * b - 3 * c
        if room >= 0:
            best = min(best, -(10 * a + 13 * b + 7 * c + min(room, 1.0)))
    return best


def test_knapsack_matches_enumeration():
    sol = branch_and_bound(knapsack(), EXACT)
    assert sol.status == OPTIMAL
    assert sol.objective == knapsack_by_hand() == -20.5
    oracle, assign = enumerate_binaries(knapsack())
    assert sol.objective == pytest.approx(oracle, abs=1e-9)
    assert sol.x[:3].tolist() == [assign[0], assign[1], assign[2]]


def test_all_binaries_fixed_equals_simplex():
    m = knapsack()
    for k in range(3):
        m.set_bounds(k, 1.0 if k != 1 else 0.0, 1.0 if k != 1 else 0.0)
    sol = branch_and_bound(m, EXACT)
    relaxed = Model()
    for v in m.variables:
        relaxed.add_variable(v.name, lb=v.lb, ub=v.ub)
    for con in m.constraints:
        relaxed.add_constraint(con.expr, con.sense, con.rhs, name=con.name)
    relaxed.set_objective(m.objective)
    assert sol.objective == pytest.approx(simplex(standard_form(relaxed)).objective, abs=1e-12)
    assert sol.nodes == 1


def test_infeasible_relaxation():
    m = Model()
    z = m.add_variable("z", BINARY, 0, 1)
    m.add_constraint(LinExpr({z: 1.0}), ">=", 2.0)
    assert branch_and_bound(m).status == INFEASIBLE


def test_integer_infeasible():
    m = Model()
    z = m.add_variable("z", BINARY, 0, 1)
    m.add_constraint(LinExpr({z: 2.0}), "=", 1.0)
    assert branch_and_bound(m, EXACT).status == INFEASIBLE


def test_reported_gap_is_honest():
    sol = branch_and_bound(knapsack(), SolverConfig(backend="internal", gap=0.02))
    assert sol.gap <= 0.02
    assert sol.bound <= sol.objective + 1e-9
    assert (sol.objective - sol.bound) / abs(sol.objective) == pytest.approx(sol.gap, abs=1e-12)


def test_bound_trace_non_decreasing():
    rng = np.random.default_rng(5)
    m = Model()
    z = [m.add_variable(f"z{k}", BINARY, 0, 1) for k in range(8)]
    w = rng.uniform(1, 5, 8)
    m.add_constraint(LinExpr(dict(zip(z, w))), "<=", float(w.sum() / 2))
    m.set_objective(LinExpr(dict(zip(z, -rng.uniform(1, 5, 8)))))
    sol = branch_and_bound(m, EXACT)
    assert np.all(np.diff(sol.bound_trace) >= -1e-12)
    assert sol.objective == pytest.approx(enumerate_binaries(m)[0], abs=1e-9)


def test_deterministic_nodes():
    a, b = branch_and_bound(knapsack(), EXACT), branch_and_bound(knapsack(), EXACT)
    assert a.nodes == b.nodes and np.array_equal(a.x, b.x) and a.bound_trace == b.bound_trace


def test_highs_backend_agrees():
    sol = solve_highs(knapsack(), SolverConfig(backend="highs", gap=1e-9))
    assert sol.objective == pytest.approx(-20.5, abs=1e-9)


def test_unknown_backend():
    with pytest.raises(ValueError, match="backend"):
        solve_model(knapsack(), SolverConfig(backend="cplex"))


def test_gap_target_validated():
    with pytest.raises(ValueError):
        SolverConfig(gap=0.0)


# --- external backend ---------------------------------------------------------

def test_external_stub_echoes_prepared_solution(tmp_path):
    m = knapsack()
    prepared = tmp_path / "prepared.txt"
    prepared.write_text(write_solution("optimal", -20.5, {"z0": 0, "z1": 1, "z2": 1, "x": 0.5}))
    cmd = f"{sys.executable} -c \"import shutil,sys; shutil.copy({str(prepared)!r}, sys.argv[2])\""
    sol = solve_external(m, cmd, tmp_path / "work")
    assert sol.status == OPTIMAL and sol.objective == -20.5
    assert (tmp_path / "work" / "model.lp").read_text().startswith("\\ knap")


def test_external_objective_mismatch_rejected(tmp_path):
    prepared = tmp_path / "prepared.txt"
    prepared.write_text(write_solution("optimal", -5.0, {"z0": 0, "z1": 1, "z2": 1, "x": 0.5}))
    cmd = f"{sys.executable} -c \"import shutil,sys; shutil.copy({str(prepared)!r}, sys.argv[2])\""
    with pytest.raises(SolverOutputError, match="disagrees"):
        solve_external(knapsack(), cmd, tmp_path)


def test_external_missing_executable(tmp_path):
    with pytest.raises(SolverLaunchError, match="cannot launch"):
        solve_external(knapsack(), "/nonexistent/solver-binary", tmp_path)


def test_external_no_output(tmp_path):
    with pytest.raises(SolverOutputError, match="no solution"):
        solve_external(knapsack(), f"{sys.executable} -c pass", tmp_path)


def test_internal_and_external_agree():
    m = knapsack()
    internal = solve_model(m, EXACT)
    external = solve_model(m, SolverConfig(backend=f"external:{sys.executable} -m nwaplan.solve.highs_runner"))
    assert external.backend == "external"
    assert abs(internal.objective - external.objective) <= 1e-6
