"""LP interchange text format and the solution document exchanged with
external solvers.

Layout::

    \\ comment
    Minimize
     obj: 3 x + 2 y + 5
    Subject To
     c1: 1 x + 2 y <= 3
    Bounds
     0 <= x <= 10
     -inf <= y <= +inf
    Binary
     z
    End

Coefficients are written with 17 significant digits so that parsing the
text reproduces every float exactly.
"""

from __future__ import annotations

import json
import math
import re

from .model import BINARY, CONTINUOUS, LinExpr, Model, ModelError

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\[\],-]*$")
_RESERVED = {"inf", "infinity", "nan"}
_SENSE_RE = re.compile(r"\s(<=|>=|=)\s")


def _num(v: float) -> str:
    if v == math.inf:
        return "+inf"
    if v == -math.inf:
        return "-inf"
    return f"{v:.17g}"


def _parse_num(tok: str) -> float:
    t = tok.lower()
    if t in ("inf", "+inf", "infinity", "+infinity"):
        return math.inf
    if t in ("-inf", "-infinity"):
        return -math.inf
    return float(tok)


def _expr_text(model: Model, expr: LinExpr, constant: float = 0.0) -> str:
    parts = []
    for vid, coef in sorted(expr.terms.items()):
        sign = "-" if coef < 0 else "+"
        parts.append(f"{sign} {_num(abs(coef))} {model.variables[vid].name}")
    if constant != 0.0:
        parts.append(f"{'-' if constant < 0 else '+'} {_num(abs(constant))}")
    if not parts:
        return "0"
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


def emit_model_file(model: Model) -> str:
    for item in (*model.variables, *model.constraints):
        if not _NAME_RE.match(item.name) or item.name.lower() in _RESERVED:
            raise ModelError(f"name {item.name!r} not representable in LP format")
    lines = [f"\\ {model.name}", "Minimize",
             f" obj: {_expr_text(model, model.objective, model.objective.constant)}",
             "Subject To"]
    for con in model.constraints:
        lines.append(f" {con.name}: {_expr_text(model, con.expr)} {con.sense} {_num(con.rhs)}")
    lines.append("Bounds")
    for v in model.variables:
        lines.append(f" {_num(v.lb)} <= {v.name} <= {_num(v.ub)}")
    bins = [v.name for v in model.variables if v.kind == BINARY]
    if bins:
        lines.append("Binary")
        lines.extend(f" {name}" for name in bins)
    lines.append("End")
    return "\n".join(lines) + "\n"


def _parse_terms(text: str, names: dict[str, int], model: Model, declare: bool):
    toks = text.split()
    expr = LinExpr()
    const = 0.0
    sign = 1.0
    coef = None
    for tok in toks:
        if tok in ("+", "-"):
            sign = -1.0 if tok == "-" else 1.0
            continue
        try:
            val = _parse_num(tok)
        except ValueError:
            val = None
        if val is not None:
            if coef is not None:
                const += sign * coef
                sign = 1.0
            coef = val
            continue
        if tok not in names:
            if not declare:
                raise ModelError(f"unknown variable {tok!r}")
            names[tok] = model.add_variable(tok, lb=0.0, ub=math.inf)
        expr.add_term(names[tok], sign * (1.0 if coef is None else coef))
        sign, coef = 1.0, None
    if coef is not None:
        const += sign * coef
    return expr, const


def parse_model_file(text: str) -> Model:
    """Inverse of :func:`emit_model_file`.

    Variables are declared in ``Bounds`` order, which the emitter writes in
    id order, so ids survive the round trip.
    """
    section = None
    name = "model"
    obj_line = ""
    con_lines: list[str] = []
    bound_lines: list[str] = []
    bin_names: list[str] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("\\"):
            if name == "model":
                name = line[1:].strip() or "model"
            continue
        key = line.lower()
        if key in ("minimize", "subject to", "bounds", "binary", "binaries", "end"):
            section = key
            continue
        if section == "minimize":
            obj_line += " " + line
        elif section == "subject to":
            con_lines.append(line)
        elif section == "bounds":
            bound_lines.append(line)
        elif section in ("binary", "binaries"):
            bin_names.extend(line.split())
    model = Model(name)
    names: dict[str, int] = {}
    bin_set = set(bin_names)
    for line in bound_lines:
        toks = line.split()
        if len(toks) != 5 or toks[1] != "<=" or toks[3] != "<=":
            raise ModelError(f"unsupported bound line {line!r}")
        vname = toks[2]
        kind = BINARY if vname in bin_set else CONTINUOUS
        names[vname] = model.add_variable(vname, kind, _parse_num(toks[0]), _parse_num(toks[4]))
    for vname in bin_names:
        if vname not in names:
            names[vname] = model.add_variable(vname, BINARY, 0.0, 1.0)
    body = obj_line.strip()
    if body and ":" in body.split()[0]:
        body = body.split(":", 1)[1]
    obj_expr, obj_const = _parse_terms(body, names, model, declare=True)
    obj_expr.constant = obj_const
    for line in con_lines:
        cname, rest = line.split(":", 1)
        m = _SENSE_RE.search(rest)
        if not m:
            raise ModelError(f"constraint without sense: {line!r}")
        lhs, sense, rhs = rest[:m.start()], m.group(1), rest[m.end():]
        expr, const = _parse_terms(lhs, names, model, declare=True)
        model.add_constraint(expr, sense, _parse_num(rhs.strip()) - const, name=cname.strip())
    model.set_objective(obj_expr)
    return model


def write_solution(status: str, objective: float | None, primal: dict[str, float],
                   dual: dict[str, float] | None = None, **extra) -> str:
    doc = {"status": status, "objective": objective, "primal": primal, "dual": dual or {}}
    doc.update(extra)
    return json.dumps(doc, indent=1, sort_keys=False)


def read_solution(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"unparsable solution document: {exc}") from exc
    for key in ("status", "objective", "primal"):
        if key not in doc:
            raise ValueError(f"solution document missing field {key!r}")
    doc.setdefault("dual", {})
    return doc
