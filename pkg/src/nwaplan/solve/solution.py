"""Backend-neutral solution container and solver dispatch."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..model import Model

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
LIMIT = "limit"


@dataclass
class SolverConfig:
    backend: str = "auto"          # auto | internal | highs | external:<command>
    gap: float = 0.02
    node_limit: int = 200_000
    time_limit: float = 600.0
    feas_tol: float = 1e-8
    opt_tol: float = 1e-9
    int_tol: float = 1e-6
    polish: bool = True
    workdir: str | None = None
    # models above this many variables go to HiGHS under backend="auto"
    internal_max_vars: int = 400

    def __post_init__(self):
        if not 0.0 < self.gap < 1.0:
            raise ValueError("gap target must lie in (0, 1)")


@dataclass
class Solution:
    status: str
    objective: float = math.nan
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    gap: float = math.nan
    bound: float = math.nan
    backend: str = ""
    nodes: int = 0
    runtime: float = 0.0
    bound_trace: list[float] = field(default_factory=list)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL or (self.status == LIMIT and self.x is not None)

    def value(self, model: Model, name: str) -> float:
        return float(self.x[model.var_id(name)])

    def primal_map(self, model: Model) -> dict[str, float]:
        return {v.name: float(self.x[v.id]) for v in model.variables}

    def dual_map(self, model: Model) -> dict[str, float]:
        if self.duals is None:
            return {}
        return {c.name: float(self.duals[c.id]) for c in model.constraints}


def solve_model(model: Model, config: SolverConfig | None = None) -> Solution:
    """Dispatch ``model`` to the configured backend."""
    cfg = config or SolverConfig()
    backend = cfg.backend
    if backend == "auto":
        backend = "internal" if model.n_vars <= cfg.internal_max_vars else "highs"
    if backend == "internal":
        from .bnb import branch_and_bound
        return branch_and_bound(model, cfg)
    if backend == "highs":
        from .highs import solve_highs
        return solve_highs(model, cfg)
    if backend.startswith("external:"):
        from .external import solve_external
        return solve_external(model, backend.split(":", 1)[1], cfg.workdir)
    raise ValueError(f"unknown solver backend {backend!r}")
