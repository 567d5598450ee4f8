import math
from dataclasses import replace

import numpy as np
import pytest

from nwaplan import bilevel
from nwaplan.investor import LowerLevelForm, build_investor_lp, solve_lower_level
from nwaplan.model import Model
from nwaplan.scenario import build_scenario
from nwaplan.solve.solution import OPTIMAL, SolverConfig
from nwaplan.synth import toy_case

INTERNAL = SolverConfig(backend="internal", gap=1e-9)


def one_var_llf(c: float, lb=0.0, ub=1.0) -> LowerLevelForm:
    return LowerLevelForm(c=np.array([c]), V=np.zeros((0, 1)), w=np.zeros(0), lb=np.array([lb]),
                          ub=np.array([ub]), B=np.zeros((1, 0)), col_names=["y"], row_names=[],
                          roles={"capacity": [0], "import": [], "export": [], "der": [], "spill": []})


def solve_one_var(c, big_m=None):
    llf = one_var_llf(c)
    model = Model()
    h = bilevel.kkt_reformulate(model, llf, big_m=big_m)
    sol, tried = bilevel.solve_single_level(model, h, INTERNAL)
    return llf, h, sol, tried


@pytest.fixture(scope="module")
def toy_solved():
    built = build_scenario(toy_case(), "bess-der")
    sol, _ = bilevel.solve_single_level(built.model, built.kkt, INTERNAL)
    assert sol.status == OPTIMAL
    return built, sol.x


@pytest.fixture(scope="module")
def toy_zero_signal():
    built = build_scenario(toy_case(), "bess-only")
    sol, _ = bilevel.solve_single_level(built.model, built.kkt, INTERNAL)
    return built, sol.x


@pytest.mark.parametrize("c, y, mu_lo, mu_up", [(1.0, 0.0, 1.0, 0.0), (-1.0, 1.0, 0.0, 1.0)])
def test_one_variable_kkt(c, y, mu_lo, mu_up):
    llf, h, sol, _ = solve_one_var(c)
    yv, lam, mu_u, mu_l, _ = h.values(sol.x)
    assert yv[0] == pytest.approx(y) and mu_l[0] == pytest.approx(mu_lo) and mu_u[0] == pytest.approx(mu_up)
    assert bilevel.kkt_residuals(llf, yv, lam, mu_u, mu_l, np.zeros(0)).ok


def test_stationarity_row_form():
    llf = one_var_llf(1.0)
    model = Model()
    h = bilevel.kkt_reformulate(model, llf)
    row = model.constraints[h.stationarity_rows[0]]
    assert row.sense == "=" and row.rhs == -1.0
    assert row.expr.terms == {h.mu_up[0]: 1.0, h.mu_lo[0]: -1.0}


def test_infinite_bound_rejected():
    with pytest.raises(ValueError, match="finite"):
        bilevel.kkt_reformulate(Model(), one_var_llf(1.0, ub=math.inf))


def test_nonpositive_big_m_rejected():
    with pytest.raises(ValueError, match="big-M"):
        bilevel.kkt_reformulate(Model(), one_var_llf(1.0), big_m=0.0)


def test_price_count_checked():
    llf = build_investor_lp(toy_case())
    with pytest.raises(ValueError, match="price variables"):
        bilevel.kkt_reformulate(Model(), llf, [])


def test_escalation_on_tight_big_m():
    # the lower-bound dual must equal 5, above the initial cap of 1
    llf, h, sol, tried = solve_one_var(5.0, big_m=1.0)
    assert sol.status == OPTIMAL
    assert tried == [1.0, 10.0]
    assert h.values(sol.x)[3][0] == pytest.approx(5.0)
    assert bilevel.bigm_load(h, sol.x) < 1.0


def test_default_big_m_per_column():
    llf = build_investor_lp(toy_case())
    m = bilevel.default_big_m(llf, 0.15)
    j = llf.capacity_col["d"]
    assert m[j] == pytest.approx(10 * (llf.c[j] + llf.pwf_ll * 0.15))
    assert m.min() >= bilevel.MIN_BIG_M


def test_set_big_m_rewrites_caps():
    llf = build_investor_lp(toy_case())
    model = Model()
    ps = [model.add_variable(f"x{k}", ub=0.15) for k in range(2)]
    h = bilevel.kkt_reformulate(model, llf, ps)
    bilevel.set_big_m(model, h, 123.0)
    assert all(model.variables[v].ub == 123.0 for v in h.mu_up)
    j, (row, *_rest) = next(iter(h.bigm_rows.items()))
    assert model.constraints[row].expr.terms[h.u_lo[j]] == -123.0


# --- identities on solved instances ----------------------------------------------

def test_linearization_equals_direct_sum(toy_solved):
    built, x = toy_solved
    direct, lin, gap = bilevel.linearization_gap(built.llf, built.kkt, x)
    assert direct > 0
    assert gap <= 1e-6


def test_linearization_zero_signal(toy_zero_signal):
    built, x = toy_zero_signal
    direct, lin, gap = bilevel.linearization_gap(built.llf, built.kkt, x)
    assert direct == pytest.approx(0.0, abs=1e-6) and lin == pytest.approx(0.0, abs=1e-6)


def test_strong_duality_on_standalone_lp():
    llf = build_investor_lp(toy_case())
    res = solve_lower_level(llf)
    d = llf.c - llf.V.T @ res.duals
    mu_lo, mu_up = np.maximum(d, 0), np.maximum(-d, 0)
    value = llf.w @ res.duals - mu_up @ llf.ub + mu_lo @ llf.lb
    assert value == pytest.approx(llf.c @ res.x, rel=1e-9)
    assert bilevel.kkt_residuals(llf, res.x, res.duals, mu_up, mu_lo, np.zeros(2)).ok


def test_heterogeneous_export_coefficient():
    llf = build_investor_lp(toy_case())
    llf.V[llf.balance_row[("d", 1)], llf.export_col[("d", 1)]] = -2.0
    with pytest.raises(ValueError, match="heterogeneous"):
        llf.v_export


def test_verify_kkt_exact_and_perturbed(toy_solved):
    built, x = toy_solved
    assert bilevel.verify_kkt(built.llf, built.kkt, x, 1e-6).ok
    bad = x.copy()
    bad[built.kkt.mu_up[0]] += 0.1
    rep = bilevel.verify_kkt(built.llf, built.kkt, bad, 1e-6)
    assert rep.stationarity == pytest.approx(0.1)
    assert not rep.passes["stationarity"]


def test_argmin_membership(toy_solved):
    built, x = toy_solved
    emb, resolved, gap = bilevel.argmin_check(built.llf, built.kkt, x)
    assert gap <= 1e-5


def test_payment_identity_solved(toy_solved):
    built, x = toy_solved
    rep = bilevel.verify_payment_identity(built.llf, built.kkt, x, built.a, built.b)
    assert rep.ok and rep.investor_income > 0
    assert rep.planner_term == pytest.approx(built.a / built.b * rep.investor_income, rel=1e-6)


def test_payment_identity_equal_factors(toy_solved):
    built, x = toy_solved
    rep = bilevel.verify_payment_identity(built.llf, built.kkt, x, 2.0, 2.0)
    assert rep.planner_term == pytest.approx(rep.investor_income, rel=1e-9)


def test_payment_identity_zero_exports(toy_zero_signal):
    built, x = toy_zero_signal
    x = x.copy()
    x[[built.kkt.y[j] for j in built.llf.export_col.values()]] = 0.0
    rep = bilevel.verify_payment_identity(built.llf, built.kkt, x, built.a, built.b)
    assert rep.investor_income == 0.0 and rep.expected == 0.0


# --- price recovery ------------------------------------------------------------

def test_price_recovery_division():
    llf = replace(build_investor_lp(toy_case()), pwf_ll=9.534)
    model = Model()
    ps = [model.add_variable(f"x{k}", ub=0.15) for k in range(2)]
    h = bilevel.kkt_reformulate(model, llf, ps)
    x = np.zeros(model.n_vars)
    key = ("d", 0)
    x[h.y[llf.export_col[key]]] = 0.5 * llf.ub[llf.export_col[key]]
    x[h.lam[llf.balance_row[key]]] = 0.95340
    x[ps[0]] = 0.1
    sig = bilevel.recover_price_signal(x, llf, h)
    assert sig.implied[0] == pytest.approx(0.100, abs=1e-12)
    assert sig.flags[key] == "ok"
    x[ps[0]] = 0.2
    assert bilevel.recover_price_signal(x, llf, h).flags[key] == "mismatch"
    j = llf.export_col[key]
    x[h.y[j]] = llf.ub[j]
    assert bilevel.recover_price_signal(x, llf, h).flags[key] == "bound-binding, skipped"


def test_price_recovery_zero_signal(toy_zero_signal):
    built, x = toy_zero_signal
    sig = bilevel.recover_price_signal(x, built.llf, built.kkt)
    assert np.all(sig.values == 0.0)
    assert not sig.mismatches


def test_price_recovery_solved(toy_solved):
    built, x = toy_solved
    sig = bilevel.recover_price_signal(x, built.llf, built.kkt)
    assert not sig.mismatches
    assert sig.max_abs_error(built.llf.pwf_ll) <= 1e-6


def test_polish_gives_exact_complementarity(toy_solved):
    built, x = toy_solved
    y, lam, mu_up, mu_lo, _ = built.kkt.values(x)
    llf = built.llf
    assert np.max(np.abs(mu_up * (llf.ub - y))) <= 1e-9
    assert np.max(np.abs(mu_lo * (y - llf.lb))) <= 1e-9


def test_valid_cuts_keep_optimum():
    case = toy_case()
    with_cuts = build_scenario(case, "bess-only")
    sol, _ = bilevel.solve_single_level(with_cuts.model, with_cuts.kkt, INTERNAL)
    # the value cut is a relaxation of the bound it encodes: phi(0) is the lower-level optimum
    phi = solve_lower_level(with_cuts.llf).objective
    assert bilevel.embedded_objective(with_cuts.llf, with_cuts.kkt, sol.x) <= phi * (1 + 1e-9) + 1e-9
    assert bilevel.linearized_payment(with_cuts.llf, with_cuts.kkt).evaluate(sol.x) >= -1e-9
