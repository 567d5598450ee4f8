import math

import numpy as np
import pytest

from nwaplan.lpfile import emit_model_file, parse_model_file, read_solution, write_solution
from nwaplan.model import BINARY, LinExpr, Model, ModelError


def _constraint_set(m: Model):
    out = {}
    for con in m.constraints:
        terms = {m.variables[v].name: c for v, c in con.expr.terms.items()}
        out[con.name] = (con.sense, con.rhs, terms)
    return out


def random_model(seed: int, n: int = 10, rows: int = 6) -> Model:
    rng = np.random.default_rng(seed)
    m = Model(f"rand{seed}")
    for j in range(n):
        if j % 4 == 3:
            m.add_variable(f"z{j}", BINARY, 0, 1)
        else:
            lb = float(rng.choice([0.0, -math.inf, -abs(rng.normal())]))
            ub = float(rng.choice([math.inf, abs(rng.normal()) + 2.0]))
            m.add_variable(f"x[{j},a]", lb=lb, ub=ub)
    for r in range(rows):
        cols = rng.choice(n, size=3, replace=False)
        e = LinExpr({int(c): float(rng.normal()) / 3.0 for c in cols})
        m.add_constraint(e, ["<=", "=", ">="][r % 3], float(rng.normal()) * 1e3 + 1e-7, name=f"r{r}")
    m.set_objective(LinExpr({j: float(rng.normal()) for j in range(n)}, constant=0.125))
    return m


def test_sections_present():
    m = Model()
    x = m.add_variable("x")
    m.add_constraint(LinExpr({x: 1.0}), ">=", 1.0, name="c1")
    m.set_objective(LinExpr({x: 1.0}))
    text = emit_model_file(m)
    for section in ("Minimize", "Subject To", "Bounds", "End"):
        assert section in text.splitlines()
    assert " c1: 1 x >= 1" in text


def test_empty_objective_written_as_zero():
    m = Model()
    m.add_variable("x")
    assert " obj: 0" in emit_model_file(m).splitlines()


def test_binary_section():
    m = Model()
    m.add_variable("z", BINARY, 0, 1)
    text = emit_model_file(m)
    assert "Binary" in text
    assert parse_model_file(text).variables[0].kind == BINARY


@pytest.mark.parametrize("seed", range(5))
def test_round_trip_random_model(seed):
    m = random_model(seed)
    back = parse_model_file(emit_model_file(m))
    assert [v.name for v in back.variables] == [v.name for v in m.variables]
    assert [(v.kind, v.lb, v.ub) for v in back.variables] == [(v.kind, v.lb, v.ub) for v in m.variables]
    assert _constraint_set(back) == _constraint_set(m)
    assert back.objective.terms == m.objective.terms
    assert back.objective.constant == m.objective.constant


def test_unrepresentable_name():
    m = Model()
    m.add_variable("bad name")
    with pytest.raises(ModelError):
        emit_model_file(m)


@pytest.mark.parametrize("name", ["inf", "nan"])
def test_reserved_names(name):
    m = Model()
    m.add_variable(name)
    with pytest.raises(ModelError):
        emit_model_file(m)


def test_solution_document_round_trip():
    text = write_solution("optimal", 1.5, {"x": 1.0}, {"c1": -2.0}, gap=0.0)
    doc = read_solution(text)
    assert doc["status"] == "optimal" and doc["primal"] == {"x": 1.0} and doc["dual"] == {"c1": -2.0}


def test_solution_document_missing_field():
    with pytest.raises(ValueError, match="primal"):
        read_solution('{"status": "optimal", "objective": 1}')


def test_solution_document_unparsable():
    with pytest.raises(ValueError, match="unparsable"):
        read_solution("status: optimal")
