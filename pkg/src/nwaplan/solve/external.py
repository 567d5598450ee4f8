"""Run a solver as a separate process through the LP / solution-document files.

The command is invoked as ``<command> model.lp solution.txt`` inside
``workdir`` and must write the solution document (see
:mod:`nwaplan.lpfile`) to ``solution.txt``.
"""

from __future__ import annotations

import math
import shlex
import subprocess
import tempfile
import time
from pathlib import Path

import numpy as np

from ..lpfile import emit_model_file, read_solution
from ..model import Model
from .solution import INFEASIBLE, LIMIT, OPTIMAL, UNBOUNDED, Solution

_STATUSES = {OPTIMAL, INFEASIBLE, UNBOUNDED, LIMIT}


class SolverLaunchError(RuntimeError):
    pass


class SolverOutputError(RuntimeError):
    pass


def solve_external(model: Model, command: str, workdir: str | Path | None = None,
                   timeout: float | None = None) -> Solution:
    argv = shlex.split(command)
    if not argv:
        raise SolverLaunchError("empty solver command")
    tmp = None
    if workdir is None:
        tmp = tempfile.TemporaryDirectory(prefix="nwaplan-")
        workdir = tmp.name
    wd = Path(workdir)
    wd.mkdir(parents=True, exist_ok=True)
    lp_path = wd / "model.lp"
    sol_path = wd / "solution.txt"
    lp_path.write_text(emit_model_file(model))
    if sol_path.exists():
        sol_path.unlink()
    t0 = time.perf_counter()
    try:
        proc = subprocess.run([*argv, str(lp_path), str(sol_path)], cwd=wd,
                              capture_output=True, text=True, timeout=timeout)
    except FileNotFoundError as exc:
        raise SolverLaunchError(f"cannot launch solver {argv[0]!r}: {exc}") from exc
    except PermissionError as exc:
        raise SolverLaunchError(f"solver {argv[0]!r} is not executable: {exc}") from exc
    if proc.returncode != 0:
        raise SolverLaunchError(f"solver exited with code {proc.returncode}: {proc.stderr.strip()}")
    if not sol_path.exists():
        raise SolverOutputError("solver produced no solution document")
    try:
        doc = read_solution(sol_path.read_text())
    except ValueError as exc:
        raise SolverOutputError(str(exc)) from exc
    finally:
        if tmp is not None:
            tmp.cleanup()
    return _to_solution(model, doc, time.perf_counter() - t0)


def _to_solution(model: Model, doc: dict, runtime: float) -> Solution:
    status = doc["status"]
    if status not in _STATUSES:
        raise SolverOutputError(f"unknown status {status!r}")
    if status in (INFEASIBLE, UNBOUNDED):
        return Solution(status, backend="external", runtime=runtime)
    primal = doc["primal"]
    missing = [v.name for v in model.variables if v.name not in primal]
    if missing:
        raise SolverOutputError(f"solution lacks values for {len(missing)} variables, e.g. {missing[0]!r}")
    x = np.array([float(primal[v.name]) for v in model.variables])
    duals = None
    if doc.get("dual"):
        duals = np.array([float(doc["dual"].get(c.name, math.nan)) for c in model.constraints])
    obj = float(model.objective.evaluate(x))
    reported = doc.get("objective")
    if reported is not None and abs(float(reported) - obj) > 1e-6 * max(1.0, abs(obj)):
        raise SolverOutputError(f"reported objective {reported} disagrees with evaluated {obj}")
    return Solution(status, obj, x, duals, float(doc.get("gap", 0.0) or 0.0),
                    float(doc.get("bound", obj) if doc.get("bound") is not None else obj),
                    backend="external", runtime=runtime)
