"""Stand-alone solver process: ``python -m nwaplan.solve.highs_runner model.lp solution.txt``.

Reads the LP interchange file, solves it with HiGHS and writes the solution
document.  Serves as the reference command for the external backend.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..lpfile import parse_model_file, write_solution
from .highs import solve_highs
from .solution import SolverConfig


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("model")
    ap.add_argument("solution")
    ap.add_argument("--gap", type=float, default=1e-6)
    ap.add_argument("--time-limit", type=float, default=600.0)
    args = ap.parse_args(argv)
    model = parse_model_file(Path(args.model).read_text())
    sol = solve_highs(model, SolverConfig(backend="highs", gap=args.gap, time_limit=args.time_limit))
    primal = sol.primal_map(model) if sol.x is not None else {}
    text = write_solution(sol.status, sol.objective if sol.x is not None else None, primal,
                          sol.dual_map(model), gap=sol.gap, bound=sol.bound)
    Path(args.solution).write_text(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
