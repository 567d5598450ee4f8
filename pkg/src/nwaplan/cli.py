"""Command-line entry point: ``nwaplan <command> ...``.

Exit codes: 0 ok, 1 usage or input error, 2 infeasible, 3 solver limit hit,
4 verification failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .bilevel import kkt_residuals
from .lpfile import emit_model_file
from .network import CaseError, load_case, overload_report
from .scenario import (SCENARIOS, ScenarioError, ScenarioReport, cashflow, compare, investor_table,
                       price_signal_csv, rebuild, rows_to_csv, run_scenario, scenario_kind)
from .solve.solution import INFEASIBLE, LIMIT, UNBOUNDED, SolverConfig

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_LIMIT, EXIT_VERIFY = 0, 1, 2, 3, 4

log = logging.getLogger("nwaplan")


def _solver_config(args) -> SolverConfig:
    backend = args.solver
    if backend == "external":
        backend = f"external:{sys.executable} -m nwaplan.solve.highs_runner"
    return SolverConfig(backend=backend, gap=args.gap, time_limit=args.time_limit)


def _exit_code(rep: ScenarioReport) -> int:
    if rep.status in (INFEASIBLE, UNBOUNDED):
        return EXIT_INFEASIBLE
    if not rep.solved:
        return EXIT_LIMIT
    if rep.scenario == "bess-der" and not rep.checks.get("ok", False):
        return EXIT_VERIFY
    if rep.status == LIMIT:
        return EXIT_LIMIT
    return EXIT_OK


def _run_one(case, kind, cfg, horizon, out):
    rep = run_scenario(case, kind, cfg, horizon)
    rep.save(out)
    return rep


def cmd_run(args) -> int:
    cfg = _solver_config(args)
    kinds = list(SCENARIOS) if args.scenario == "all" else [scenario_kind(args.scenario)]
    outs = [Path(args.out)] if len(kinds) == 1 else [
        Path(args.out).with_name(f"{Path(args.out).stem}_{k}{Path(args.out).suffix or '.json'}") for k in kinds]
    if args.parallel and len(kinds) > 1:
        with ProcessPoolExecutor(len(kinds)) as pool:
            reps = list(pool.map(_run_one, [args.case] * len(kinds), kinds, [cfg] * len(kinds),
                                 [args.horizon] * len(kinds), outs))
    else:
        reps = [_run_one(args.case, k, cfg, args.horizon, o) for k, o in zip(kinds, outs)]
    code = EXIT_OK
    for rep, out in zip(reps, outs):
        print(f"{rep.scenario}: status={rep.status} lcc={rep.total_lcc:,.2f} gap={rep.gap:.4g} "
              f"runtime={rep.runtime_s:.1f}s -> {out}")
        code = max(code, _exit_code(rep))
    return code


def cmd_compare(args) -> int:
    reps = [ScenarioReport.load(p) for p in args.reports]
    rows = compare(reps)
    text = rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    print(json.dumps(rows, indent=1))
    return EXIT_OK


def cmd_cashflow(args) -> int:
    cf = cashflow(ScenarioReport.load(args.report))
    text = cf.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_export(args) -> int:
    rep = ScenarioReport.load(args.report)
    if args.what == "price-signal-csv":
        text = price_signal_csv(rep)
    elif args.what == "investor-table":
        text = investor_table(rep)
    else:
        text = emit_model_file(rebuild(rep).model)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_inspect(args) -> int:
    case = load_case(args.case)
    print(f"case {case.name}: {len(case.feeder.buses)} buses, {len(case.feeder.lines)} lines, "
          f"{case.series.steps} steps")
    print(f"DER candidates: {', '.join(case.feeder.der_buses)}; "
          f"BESS candidates: {', '.join(case.feeder.bess_buses)}")
    print(f"{'component':<12}{'kind':<13}{'peak kW':>10}{'rating kW':>11}{'percent':>9}")
    for it in overload_report(case):
        flag = "  OVERLOADED" if it.overloaded else ""
        print(f"{it.component:<12}{it.kind:<13}{it.peak_kw:>10.1f}{it.rating_kw:>11.1f}{it.percent:>8.1f}%{flag}")
    for note in case.provenance:
        print(f"note: {note}")
    return EXIT_OK


def cmd_validate_kkt(args) -> int:
    rep = ScenarioReport.load(args.report)
    if not rep.solved:
        print("report holds no solution")
        return EXIT_VERIFY
    llf = rebuild(rep).llf
    ll = rep.lower_level
    kkt = kkt_residuals(llf, ll["y"], ll["lam"], ll["mu_up"], ll["mu_lo"], ll["price"], args.tol)
    print(json.dumps(kkt.as_dict(), indent=1))
    stored = {k: rep.checks.get(k, {}).get("ok") for k in ("payment", "linearization", "argmin",
                                                             "price_recovery")}
    print(json.dumps({"recorded_checks": stored}, indent=1))
    return EXIT_OK if kkt.ok and all(v is not False for v in stored.values()) else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nwaplan", description="DER non-wires-alternative planner")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="solve a scenario")
    p.add_argument("--case", required=True)
    p.add_argument("--scenario", required=True, help="baseline | bess | bess-der | all")
    p.add_argument("--out", required=True)
    p.add_argument("--gap", type=float, default=0.02)
    p.add_argument("--horizon", type=int)
    p.add_argument("--time-limit", type=float, default=600.0)
    p.add_argument("--solver", default="auto", help="auto | internal | highs | external[:CMD]")
    p.add_argument("--parallel", action="store_true", help="run scenarios concurrently with 'all'")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="tabulate reports against the baseline")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("cashflow", help="year-by-year discounted costs")
    p.add_argument("report")
    p.add_argument("--out")
    p.set_defaults(func=cmd_cashflow)

    p = sub.add_parser("export", help="write a derived artifact")
    p.add_argument("report")
    p.add_argument("--what", required=True, choices=["price-signal-csv", "lp-file", "investor-table"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("inspect", help="overload screening of a case")
    p.add_argument("--case", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("validate-kkt", help="re-check lower-level optimality of a report")
    p.add_argument("report")
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_validate_kkt)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors, which would read as "infeasible" here
        return EXIT_OK if not exc.code else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (CaseError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
