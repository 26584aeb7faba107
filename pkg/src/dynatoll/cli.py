"""Command-line entry point.

Subcommands: validate, dnl, due, optimize, compare.  Every run writes
its outputs plus a manifest.json recording the fully-resolved
configuration, so a run can be reproduced from the manifest alone.

Exit codes: 0 success, 1 validation/parse failure, 2 solver failure,
3 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import errors
from .emissions import path_emission, total_emission
from .equilibrium import due_cost_matrix, fixed_point_solve, initial_profile, total_travel_cost
from .loading import effective_delay, load_network
from .reports import (
    ComparisonReport,
    RunManifest,
    read_flows_csv,
    read_toll_csv,
    write_arc_curves_csv,
    write_flows_csv,
    write_path_table_csv,
    write_toll_csv,
)
from .scenario import bundled_path, load_bundled, load_scenario
from .tolling import PenaltySettings, Weights, evaluate_toll, gradient_projection_solve
from .tolls import path_toll_costs

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVER = 2
EXIT_IO = 3

_VALIDATION_ERRORS = (
    errors.ScenarioParseError,
    errors.NetworkValidationError,
    errors.UnitError,
    errors.DomainError,
    errors.GridMismatchError,
)
_SOLVER_ERRORS = (
    errors.StepSizeError,
    errors.NoDescentError,
    errors.HorizonOverflowError,
    errors.ProbeFailureError,
    errors.InfeasibleProjectionError,
    errors.InfeasibleFlowError,
    errors.DegenerateTrajectoryError,
)


def _load(args):
    """Scenario from a file path or a bundled name (case1 / case2)."""
    spec = args.scenario
    p = Path(spec)
    if p.exists():
        sc = load_scenario(p)
        origin = str(p)
    else:
        try:
            sc = load_bundled(spec)
        except FileNotFoundError:
            raise errors.ScenarioParseError(
                f"scenario {spec!r}: no such file and not a bundled name"
            ) from None
        origin = str(bundled_path(spec))
    if getattr(args, "dt_override", None):
        sc = sc.with_dt(args.dt_override)
    if getattr(args, "max_iters", None):
        sc.fixed_point = replace(sc.fixed_point, max_iters=args.max_iters)
        sc.solver["max_iters"] = args.max_iters
        sc.resolved["solver"]["max_iters"] = args.max_iters
    if getattr(args, "penalty_m0", None):
        sc.toll["penalty_m0"] = args.penalty_m0
        sc.resolved["toll"]["penalty_m0"] = args.penalty_m0
    if getattr(args, "weights", None):
        parts = [float(x) for x in args.weights.split(",")]
        if len(parts) != 2 or min(parts) < 0:
            raise errors.ScenarioParseError("--weights needs two nonnegative numbers a,b")
        s = sum(parts)
        if abs(s - 1.0) > 5e-3:
            raise errors.ScenarioParseError(f"--weights must sum to 1 (got {s})")
        sc.toll["weights"] = [x / s for x in parts]
        sc.resolved["toll"]["weights"] = sc.toll["weights"]
    return sc, origin


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _manifest(out: Path, origin: str, sub: str, sc, t0: float, stats: dict) -> None:
    RunManifest(
        scenario=origin, subcommand=sub, resolved=sc.resolved,
        out_dir=str(out), wall_seconds=time.perf_counter() - t0, stats=stats,
    ).write(out / "manifest.json")


def cmd_validate(args) -> int:
    sc, origin = _load(args)
    print(f"scenario {origin}: valid")
    print(f"  arcs: {len(sc.net.arcs)}  paths: {len(sc.net.paths)}  od pairs: {len(sc.net.ods)}")
    print(f"  units: distance=miles time=hours speed=mph (audited)")
    print(f"  horizon: [{sc.grid.t0}, {sc.grid.tf}] dt={sc.grid.dt} ({sc.grid.n_cells} cells)")
    print(f"  emission model: {sc.emission.variant}")
    tolled = sc.toll["arcs"]
    if tolled:
        print(f"  tolled arcs: {tolled} (upper bound {sc.toll['y_ub']})")
    return EXIT_OK


def _dump_state(out: Path, prefix: str, sc, h, toll=None) -> dict:
    """Flows, per-path series and arc curves for one loaded state;
    returns the totals used in reports (double-entry source)."""
    dnl = load_network(h, sc.net, sc.grid, extension=sc.solver["extension"])
    psi = effective_delay(dnl, sc.penalty)
    em = path_emission(dnl, sc.net, sc.emission)
    tolls = path_toll_costs(dnl, sc.net, toll, at_departure=sc.solver["toll_at_departure"])
    write_flows_csv(out / f"{prefix}flows.csv", h)
    write_path_table_csv(out / f"{prefix}paths.csv", h, psi, em.per_vehicle, tolls)
    write_arc_curves_csv(out / f"{prefix}arcs.csv", dnl)
    return {
        "total_travel_cost": total_travel_cost(h, psi),
        "total_emission": total_emission(h, em, sc.grid),
        "vehicles_on_network_at_tf": dnl.vehicles_on_network_at_tf,
    }


def cmd_dnl(args) -> int:
    t0 = time.perf_counter()
    sc, origin = _load(args)
    out = _outdir(args)
    h = read_flows_csv(args.flows, sc.net, sc.grid)
    totals = _dump_state(out, "", sc, h)
    _write_json(out / "totals.json", totals)
    _manifest(out, origin, "dnl", sc, t0, {"flows_file": str(args.flows)})
    print(f"dnl: cost {totals['total_travel_cost']:.6g} veh h, "
          f"emission {totals['total_emission']:.6g} g -> {out}")
    return EXIT_OK


def _solve_due(sc, toll=None):
    h0 = initial_profile(sc.net, sc.grid, window=sc.solver["depart_window"])
    return fixed_point_solve(
        sc.net, sc.grid, toll, sc.penalty, sc.fixed_point, h0,
        toll_at_departure=sc.solver["toll_at_departure"],
        extension=sc.solver["extension"],
        audit_tol=sc.solver["audit_tol"],
    )


def _due_report_payload(rep, totals) -> dict:
    return {
        "iterations": rep.iterations,
        "residual": rep.residual,
        "relative_residual": rep.relative_residual,
        "converged": rep.converged,
        "alpha_final": rep.alpha_final,
        "v_ij": rep.v_ij,
        "merit_gap": rep.merit_gap,
        "total_travel_cost": totals["total_travel_cost"],
        "total_emission": totals["total_emission"],
        "audit": {
            "violating_mass_fraction": rep.audit.violating_mass_fraction,
            "n_violating_cells": rep.audit.n_violating_cells,
            "tol": rep.audit.tol,
        },
    }


def cmd_due(args) -> int:
    t0 = time.perf_counter()
    sc, origin = _load(args)
    out = _outdir(args)
    toll = read_toll_csv(args.toll, sc.toll["y_ub"]) if args.toll else None
    h, rep = _solve_due(sc, toll)
    totals = _dump_state(out, "", sc, h, toll)
    _write_json(out / "due_report.json", _due_report_payload(rep, totals))
    _manifest(out, origin, "due", sc, t0,
              {"iterations": rep.iterations, "converged": rep.converged})
    print(f"due: {rep.iterations} iterations, relative residual "
          f"{rep.relative_residual:.3e}, converged={rep.converged}")
    print(f"  cost {totals['total_travel_cost']:.6g} veh h, "
          f"emission {totals['total_emission']:.6g} g -> {out}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    t0 = time.perf_counter()
    sc, origin = _load(args)
    out = _outdir(args)
    state, report, detail = gradient_projection_solve(sc, mode=args.mode)
    write_toll_csv(out / "toll.csv", state.toll)
    h_base, rep_base = detail["no_toll"]
    h_toll, rep_toll = detail["with_toll"]
    base_totals = _dump_state(out, "no_toll_", sc, h_base)
    toll_totals = _dump_state(out, "with_toll_", sc, h_toll, state.toll)
    (out / "comparison.txt").write_text(report.render())
    _write_json(out / "comparison.json", report.to_dict())
    _write_json(out / "due_report_no_toll.json", _due_report_payload(rep_base, base_totals))
    _write_json(out / "due_report_with_toll.json", _due_report_payload(rep_toll, toll_totals))
    _write_json(out / "penalty_history.json", {"rounds": state.history})
    _manifest(out, origin, "optimize", sc, t0, {
        "rounds": len(state.history),
        "accepted_steps": sum(r["accepted_steps"] for r in state.history),
        "max_toll": float(state.toll.values.max()) if state.toll.values.size else 0.0,
    })
    print(report.render(), end="")
    print(f"-> {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    t0 = time.perf_counter()
    sc, origin = _load(args)
    out = _outdir(args)
    base_cost, base_em, _rep, _h = evaluate_toll(sc, None)
    rows = [("due no toll", base_cost, base_em)]
    for i, toll_file in enumerate(args.toll or []):
        toll = read_toll_csv(toll_file, sc.toll["y_ub"])
        if toll.is_zero():
            cost, em = base_cost, base_em
        else:
            cost, em, _rep, _h = evaluate_toll(sc, toll)
        rows.append((f"due toll[{Path(toll_file).stem}]", cost, em))
    report = ComparisonReport(tuple(sc.toll["weights"]), rows)
    (out / "comparison.txt").write_text(report.render())
    _write_json(out / "comparison.json", report.to_dict())
    _manifest(out, origin, "compare", sc, t0, {"n_tolls": len(args.toll or [])})
    print(report.render(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="dynatoll",
        description="dynamic user equilibrium with emission-aware toll design",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--scenario", required=True,
                       help="scenario TOML path or bundled name (case1, case2)")
        p.add_argument("--dt-override", type=float, default=None,
                       help="replace the scenario grid step")
        if out:
            p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("validate", help="parse and validate a scenario")
    common(p, out=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("dnl", help="load given departure rates through the network")
    common(p)
    p.add_argument("--flows", required=True, help="departure-rate CSV on the scenario grid")
    p.set_defaults(func=cmd_dnl)

    p = sub.add_parser("due", help="solve the dynamic user equilibrium")
    common(p)
    p.add_argument("--toll", default=None, help="toll CSV to apply during the solve")
    p.add_argument("--max-iters", type=int, default=None)
    p.set_defaults(func=cmd_due)

    p = sub.add_parser("optimize", help="optimize the dynamic toll")
    common(p)
    p.add_argument("--weights", default=None, help="scalarization weights a,b")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--penalty-m0", type=float, default=None)
    p.add_argument("--mode", choices=("joint", "bilevel"), default=None)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("compare", help="rebuild a comparison table from saved tolls")
    common(p)
    p.add_argument("--toll", action="append", default=[],
                   help="saved toll CSV (repeatable)")
    p.add_argument("--max-iters", type=int, default=None)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except _SOLVER_ERRORS as err:
        print(f"solver error: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
