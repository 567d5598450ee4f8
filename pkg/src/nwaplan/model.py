"""Algebraic modeling layer: variables, linear expressions, constraints and
conversion to the equality-plus-bounds standard form used by the simplex."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

CONTINUOUS = "continuous"
BINARY = "binary"
SENSES = ("<=", "=", ">=")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Variable:
    id: int
    name: str
    kind: str = CONTINUOUS
    lb: float = 0.0
    ub: float = math.inf


class LinExpr:
    """Sparse linear expression ``sum(coef * var) + constant``.

    Zero coefficients are dropped on construction and after arithmetic.
    """

    __slots__ = ("terms", "constant")

    def __init__(self, terms: Mapping[int, float] | Iterable[tuple[int, float]] | None = None,
                 constant: float = 0.0):
        self.terms: dict[int, float] = {}
        self.constant = float(constant)
        if terms is None:
            return
        items = terms.items() if isinstance(terms, Mapping) else terms
        for vid, coef in items:
            self.add_term(vid, coef)

    @classmethod
    def var(cls, vid: int, coef: float = 1.0) -> "LinExpr":
        return cls({vid: coef})

    def add_term(self, vid: int, coef: float) -> "LinExpr":
        coef = float(coef)
        if coef == 0.0:
            return self
        new = self.terms.get(vid, 0.0) + coef
        if new == 0.0:
            self.terms.pop(vid, None)
        else:
            self.terms[vid] = new
        return self

    def add(self, other: "LinExpr | float", scale: float = 1.0) -> "LinExpr":
        """In-place ``self += scale * other``."""
        if isinstance(other, LinExpr):
            for vid, coef in other.terms.items():
                self.add_term(vid, scale * coef)
            self.constant += scale * other.constant
        else:
            self.constant += scale * float(other)
        return self

    def copy(self) -> "LinExpr":
        out = LinExpr()
        out.terms = dict(self.terms)
        out.constant = self.constant
        return out

    def __add__(self, other):
        return self.copy().add(other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.copy().add(other, -1.0)

    def __rsub__(self, other):
        return (-self).add(other)

    def __neg__(self):
        return self * -1.0

    def __mul__(self, k: float):
        k = float(k)
        out = LinExpr(constant=self.constant * k)
        if k != 0.0:
            out.terms = {v: c * k for v, c in self.terms.items()}
        return out

    __rmul__ = __mul__

    def evaluate(self, values) -> float:
        """Value at a point; ``values`` is indexable by variable id."""
        return math.fsum([c * float(values[v]) for v, c in self.terms.items()] + [self.constant])

    def __repr__(self):
        body = " + ".join(f"{c:g}*v{v}" for v, c in sorted(self.terms.items()))
        return f"LinExpr({body or '0'} + {self.constant:g})"


@dataclass
class Constraint:
    id: int
    name: str
    expr: LinExpr
    sense: str
    rhs: float
    dual_tag: str | None = None


@dataclass
class Model:
    name: str = "model"
    variables: list[Variable] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: LinExpr = field(default_factory=LinExpr)
    _var_index: dict[str, int] = field(default_factory=dict, repr=False)
    _con_index: dict[str, int] = field(default_factory=dict, repr=False)
    frozen: bool = False

    # --- construction -------------------------------------------------
    def add_variable(self, name: str, kind: str = CONTINUOUS,
                     lb: float = 0.0, ub: float = math.inf) -> int:
        self._check_mutable()
        if name in self._var_index:
            raise ModelError(f"duplicate variable name {name!r}")
        if kind == BINARY:
            lb, ub = (0.0 if lb is None else lb), (1.0 if ub is None else ub)
            if lb < 0 or ub > 1:
                raise ModelError(f"binary {name!r} bounds must lie in [0, 1]")
        elif kind != CONTINUOUS:
            raise ModelError(f"unknown variable kind {kind!r}")
        lb = -math.inf if lb is None else float(lb)
        ub = math.inf if ub is None else float(ub)
        if math.isnan(lb) or math.isnan(ub) or lb > ub:
            raise ModelError(f"variable {name!r}: lb {lb} > ub {ub}")
        vid = len(self.variables)
        self.variables.append(Variable(vid, name, kind, lb, ub))
        self._var_index[name] = vid
        return vid

    def add_constraint(self, expr: LinExpr, sense: str, rhs: float = 0.0,
                       name: str | None = None, dual_tag: str | None = None) -> int:
        self._check_mutable()
        if sense == "==":
            sense = "="
        if sense not in SENSES:
            raise ModelError(f"unknown sense {sense!r}")
        rhs = float(rhs) - expr.constant
        if not math.isfinite(rhs):
            raise ModelError("constraint rhs must be finite")
        n = len(self.variables)
        for vid in expr.terms:
            if not 0 <= vid < n:
                raise ModelError(f"unknown variable id {vid}")
        cid = len(self.constraints)
        name = name or f"c{cid}"
        if name in self._con_index:
            raise ModelError(f"duplicate constraint name {name!r}")
        body = LinExpr()
        body.terms = dict(expr.terms)
        self.constraints.append(Constraint(cid, name, body, sense, rhs, dual_tag))
        self._con_index[name] = cid
        return cid

    def set_objective(self, expr: LinExpr) -> None:
        self._check_mutable()
        for vid in expr.terms:
            if not 0 <= vid < len(self.variables):
                raise ModelError(f"unknown variable id {vid}")
        self.objective = expr.copy()

    def set_bounds(self, vid: int, lb: float | None = None, ub: float | None = None) -> None:
        self._check_mutable()
        v = self.variables[vid]
        lb = v.lb if lb is None else float(lb)
        ub = v.ub if ub is None else float(ub)
        if lb > ub:
            raise ModelError(f"variable {v.name!r}: lb {lb} > ub {ub}")
        self.variables[vid] = Variable(v.id, v.name, v.kind, lb, ub)

    def freeze(self) -> "Model":
        self.frozen = True
        return self

    def _check_mutable(self):
        if self.frozen:
            raise ModelError("model is frozen")

    # --- lookup ---------------------------------------------------------
    def var_id(self, name: str) -> int:
        return self._var_index[name]

    def constraint(self, name: str) -> Constraint:
        return self.constraints[self._con_index[name]]

    def constraint_id(self, name: str) -> int:
        return self._con_index[name]

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def binaries(self) -> list[int]:
        return [v.id for v in self.variables if v.kind == BINARY]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lb = np.array([v.lb for v in self.variables], dtype=float)
        ub = np.array([v.ub for v in self.variables], dtype=float)
        return lb, ub

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for vid, coef in self.objective.terms.items():
            c[vid] = coef
        return c

    def copy(self) -> "Model":
        m = Model(self.name)
        m.variables = list(self.variables)
        m.constraints = [Constraint(c.id, c.name, c.expr.copy(), c.sense, c.rhs, c.dual_tag)
                         for c in self.constraints]
        m.objective = self.objective.copy()
        m._var_index = dict(self._var_index)
        m._con_index = dict(self._con_index)
        return m

    def row_arrays(self):
        """CSR-style triplets of the constraint matrix: (rows, cols, vals)."""
        rows, cols, vals = [], [], []
        for con in self.constraints:
            for vid, coef in con.expr.terms.items():
                rows.append(con.id)
                cols.append(vid)
                vals.append(coef)
        return (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64),
                np.asarray(vals, dtype=float))

    def is_feasible(self, x, tol: float = 1e-8) -> bool:
        lb, ub = self.bounds()
        x = np.asarray(x, dtype=float)
        if np.any(x < lb - tol) or np.any(x > ub + tol):
            return False
        for v in self.variables:
            if v.kind == BINARY and min(abs(x[v.id]), abs(x[v.id] - 1)) > tol:
                return False
        for con in self.constraints:
            lhs = con.expr.evaluate(x)
            if con.sense == "<=" and lhs > con.rhs + tol:
                return False
            if con.sense == ">=" and lhs < con.rhs - tol:
                return False
            if con.sense == "=" and abs(lhs - con.rhs) > tol:
                return False
        return True


@dataclass
class StandardLp:
    """``min c.y  s.t.  V y = w,  lb <= y <= ub`` with slack columns appended.

    Columns ``0..n_orig-1`` are the model variables in id order; column
    ``n_orig + k`` is the slack of ``slack_rows[k]``.
    """

    c: np.ndarray
    V: np.ndarray
    w: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    var_of_col: list[int]
    col_of_var: dict[int, int]
    row_of_con: list[int]
    slack_rows: list[int]
    objective_constant: float = 0.0
    col_names: list[str] = field(default_factory=list)
    row_names: list[str] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.V.shape

    def extend_point(self, x: np.ndarray) -> np.ndarray:
        """Map a model point to the standard-form column vector (slacks filled)."""
        n_orig = len(self.var_of_col)
        y = np.zeros(self.V.shape[1])
        y[:n_orig] = np.asarray(x, dtype=float)[self.var_of_col]
        for k, r in enumerate(self.slack_rows):
            col = n_orig + k
            resid = self.w[r] - self.V[r, :n_orig] @ y[:n_orig]
            y[col] = resid / self.V[r, col]
        return y


def standard_form(model: Model) -> StandardLp:
    if any(v.kind == BINARY for v in model.variables):
        raise ModelError("standard_form requires a continuous model (binary variable present)")
    n = model.n_vars
    m = len(model.constraints)
    ineq = [con.id for con in model.constraints if con.sense != "="]
    ncols = n + len(ineq)
    V = np.zeros((m, ncols))
    w = np.zeros(m)
    lb = np.zeros(ncols)
    ub = np.full(ncols, math.inf)
    c = np.zeros(ncols)
    vlb, vub = model.bounds()
    lb[:n], ub[:n] = vlb, vub
    c[:n] = model.objective_vector()
    slack_col = {cid: n + k for k, cid in enumerate(ineq)}
    for con in model.constraints:
        for vid, coef in con.expr.terms.items():
            V[con.id, vid] = coef
        w[con.id] = con.rhs
        if con.sense == "<=":
            V[con.id, slack_col[con.id]] = 1.0
        elif con.sense == ">=":
            V[con.id, slack_col[con.id]] = -1.0
    names = [v.name for v in model.variables] + [f"slack[{model.constraints[r].name}]" for r in ineq]
    return StandardLp(c=c, V=V, w=w, lb=lb, ub=ub,
                      var_of_col=list(range(n)), col_of_var={i: i for i in range(n)},
                      row_of_con=list(range(m)), slack_rows=ineq,
                      objective_constant=model.objective.constant,
                      col_names=names, row_names=[con.name for con in model.constraints])
