"""Command-line entry point.

Exit codes: 0 success, 1 unexpected error, 2 usage or input error,
3 some meters left unconnected, 4 radio budget infeasible,
5 validation gap above tolerance, 6 instance too large for the exact oracle.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checker import check_solution
from .des import simulate_des, validate
from .link import RadioBudgetError
from .macdelay import evaluate_forest
from .oracle import OracleRefusal, approximation_bound, exact_min_daps
from .params import ConfigError, PlanConfig, load_config
from .placement import plan
from .report import (connections_cdf, csv_text, diagnostics_csv, header_line, hops_cdf, load_solution,
                     queue_delay_cdf, solution_geojson, solution_json, summary_text)
from .scenario import DENSITY_PRESETS, ScenarioError, generate_synthetic, load_scenario

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_UNCONNECTED = 3
EXIT_RADIO = 4
EXIT_VALIDATION = 5
EXIT_ORACLE = 6

log = logging.getLogger("dapplan")


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _load(args):
    return load_scenario(args.scenario, args.config, latlon=True if args.latlon else None, per_curve_file=args.per_curve)


def _set_threads(n):
    if not n:
        return
    try:
        import numba

        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    except ImportError:
        pass


# --- subcommands --------------------------------------------------------------------


def cmd_generate(args) -> int:
    config = load_config(args.config) if args.config else PlanConfig()
    area = args.area
    if area is None:
        area = args.sms / DENSITY_PRESETS[args.profile]
    sc = generate_synthetic(args.sms, args.poles, area, args.profile, args.seed, config)
    out = Path(args.out)
    _write(out, "scenario.csv", header_line(sc, args.seed) + sc.to_csv())
    _write(out, "config", header_line(sc, args.seed) + config.to_text())
    print(f"wrote {len(sc.sms)} meters and {len(sc.poles)} poles over {area:.3f} km^2 "
          f"({len(sc.sms) / area:.1f} meters/km^2) to {out}")
    return EXIT_OK


def write_plan_outputs(solution, out: Path, seed, diagnostics: bool = False) -> list:
    files = [
        _write(out, "solution.json", solution_json(solution, seed)),
        _write(out, "solution.geojson", solution_geojson(solution, seed)),
        _write(out, "hops_cdf.csv", hops_cdf(solution, seed)),
        _write(out, "connections_cdf.csv", connections_cdf(solution, seed)),
        _write(out, "queue_delay_cdf.csv", queue_delay_cdf(solution, seed)),
        _write(out, "summary.txt", summary_text(solution, seed)),
    ]
    if diagnostics:
        files.append(_write(out, "diagnostics.csv", diagnostics_csv(solution, seed)))
    return files


def cmd_plan(args) -> int:
    sc = _load(args)
    sc.d_smax, sc.d_pmax  # surface radio-budget errors before planning
    t0 = time.perf_counter()
    solution = plan(sc, relocate=not args.no_relocate)
    wall = time.perf_counter() - t0
    problems = check_solution(sc, solution.forest, solution.unconnected)
    if problems:
        for p in problems[:20]:
            print(f"constraint violation: {p}", file=sys.stderr)
        return EXIT_ERROR
    write_plan_outputs(solution, Path(args.out), args.seed, args.diagnostics)
    sys.stdout.write(summary_text(solution, args.seed))
    print(f"planning time: {wall:.2f} s")
    if solution.unconnected:
        print(f"warning: {len(solution.unconnected)} meters could not be connected", file=sys.stderr)
        return EXIT_UNCONNECTED
    return EXIT_OK


def cmd_validate(args) -> int:
    sc = _load(args)
    forest = load_solution(Path(args.solution).read_text(), sc)
    analysis = evaluate_forest(forest, sc.config)
    analytic = analysis.reliability.copy()
    if args.corrupt:
        # test hook: shift every analytic value to check that the detector fires
        analytic = np.clip(analytic - args.corrupt, 0.0, 1.0)
    result = simulate_des(forest, sc.config, args.duration, args.seed, args.traffic_scale)
    report = validate(sc, forest, analytic, result, args.tolerance, args.min_samples)
    out = Path(args.out)
    rows = [(r.node, r.traffic_class, r.analytic, r.empirical if r.samples or report.packets == 0 else None,
             r.gap if r.gap == r.gap else None, r.samples, int(r.flagged(report.tolerance))) for r in report.rows]
    _write(out, "validation.csv", csv_text(sc, args.seed, ["node", "class", "analytic", "empirical", "gap", "samples", "flag"], rows))
    if args.packets:
        sm_ids = [s.id for s in sc.sms]
        names = [t.name for t in sc.traffic]
        _write(out, "packets.csv", csv_text(sc, args.seed, ["packet_id", "src", "class", "gen_t", "del_t", "hops", "lost"],
                                            result.rows(sm_ids, names)))
    lines = [header_line(sc, args.seed).rstrip("\n"),
             f"simulated packets: {report.packets}",
             f"lost packets: {int(result.lost.sum())}",
             f"rows: {len(report.rows)}",
             f"max gap: {report.max_gap:.4f} (tolerance {report.tolerance})",
             f"flagged rows: {len(report.flagged)}"]
    lines += [f"  node {r.node} {r.traffic_class}: analytic {r.analytic:.4f} simulated {r.empirical:.4f}"
              for r in report.flagged[:50]]
    text = "\n".join(lines) + "\n"
    _write(out, "validation_summary.txt", text)
    sys.stdout.write(text)
    return EXIT_OK if report.ok else EXIT_VALIDATION


def cmd_exact(args) -> int:
    if args.scenario:
        instances = [("input", _load(args))]
    else:
        config = load_config(args.config) if args.config else PlanConfig()
        instances = []
        for k in range(args.sweep):
            seed = args.seed + k
            profile = args.profile[k % len(args.profile)]
            area = args.sms / DENSITY_PRESETS[profile]
            instances.append((f"{profile}-{seed}", generate_synthetic(args.sms, args.poles, area, profile, seed, config)))
    rows = []
    for name, sc in instances:
        t0 = time.perf_counter()
        heur = plan(sc)
        t_h = time.perf_counter() - t0
        try:
            ex = exact_min_daps(sc, args.max_poles, args.max_sms, args.timeout)
        except OracleRefusal as exc:
            print(f"{name}: refused: {exc}", file=sys.stderr)
            return EXIT_ORACLE
        h = len(heur.daps)
        ratio = (h / ex.count if ex.count else (1.0 if h == 0 else float("inf"))) if ex.count is not None else None
        rows.append((name, len(sc.sms), len(sc.poles), h, ex.count, ratio, approximation_bound(len(sc.sms)),
                     ex.status, round(t_h, 3), round(ex.wall_time_s, 3)))
    cols = ["instance", "n_sm", "n_poles", "heuristic", "oracle", "ratio", "bound", "status", "heuristic_s", "oracle_s"]
    sc0 = instances[0][1]
    text = csv_text(sc0, args.seed, cols, rows)
    if args.out:
        _write(Path(args.out), "exact.csv", text)
    sys.stdout.write(text)
    ratios = [r[5] for r in rows if r[5] is not None]
    if ratios:
        print(f"median ratio: {float(np.median(ratios)):.3f}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .placement import PlacementSolution

    sc = _load(args)
    forest = load_solution(Path(args.solution).read_text(), sc)
    analysis = evaluate_forest(forest, sc.config)
    solution = PlacementSolution(sc, tuple(forest.dap_poles), forest, analysis)
    out = Path(args.out)
    _write(out, "hops_cdf.csv", hops_cdf(solution, args.seed))
    _write(out, "connections_cdf.csv", connections_cdf(solution, args.seed))
    _write(out, "queue_delay_cdf.csv", queue_delay_cdf(solution, args.seed))
    _write(out, "summary.txt", summary_text(solution, args.seed))
    if args.diagnostics:
        _write(out, "diagnostics.csv", diagnostics_csv(solution, args.seed))
    sys.stdout.write(summary_text(solution, args.seed))
    return EXIT_OK


# --- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file (DAPPLAN_* env vars override it)")
    common.add_argument("--seed", type=int, default=0, help="random seed, recorded in every output header")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--threads", type=int, default=0, help="cap on worker threads (0 = library default)")
    common.add_argument("-v", "--verbose", action="store_true")

    scen = argparse.ArgumentParser(add_help=False)
    scen.add_argument("--scenario", required=True, help="node CSV (id,kind,x,y,height,indoor)")
    scen.add_argument("--latlon", action="store_true", help="x/y columns hold longitude/latitude")
    scen.add_argument("--per-curve", help="CSV sinr_db,per replacing the analytic PER curve")

    p = argparse.ArgumentParser(prog="dapplan", description="DAP placement and routing for smart-meter networks")
    p.add_argument("--version", action="version", version=f"dapplan {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic scenario")
    g.add_argument("--profile", choices=sorted(DENSITY_PRESETS), default="suburban")
    g.add_argument("--sms", type=int, required=True)
    g.add_argument("--poles", type=int, required=True)
    g.add_argument("--area", type=float, help="km^2 (default: meters / profile density)")
    g.set_defaults(func=cmd_generate)

    pl = sub.add_parser("plan", parents=[common, scen], help="place DAPs and build routes")
    pl.add_argument("--no-relocate", action="store_true", help="skip the centroid relocation step")
    pl.add_argument("--diagnostics", action="store_true", help="also write per-node MAC diagnostics")
    pl.set_defaults(func=cmd_plan)

    v = sub.add_parser("validate", parents=[common, scen], help="compare analysis with simulation")
    v.add_argument("--solution", required=True)
    v.add_argument("--duration", type=float, default=86400.0, help="simulated traffic window, seconds")
    v.add_argument("--traffic-scale", type=float, default=1.0)
    v.add_argument("--tolerance", type=float, default=0.05)
    v.add_argument("--min-samples", type=int, default=30)
    v.add_argument("--packets", action="store_true", help="also write the per-packet CSV")
    v.add_argument("--corrupt", type=float, default=0.0, help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser("exact", parents=[common], help="heuristic vs exact optimum on small instances")
    e.add_argument("--scenario", help="node CSV; omit to run a seeded sweep")
    e.add_argument("--latlon", action="store_true")
    e.add_argument("--per-curve")
    e.add_argument("--sweep", type=int, default=30, help="number of seeded instances")
    e.add_argument("--profile", nargs="+", choices=sorted(DENSITY_PRESETS), default=["rural", "suburban", "urban"])
    e.add_argument("--sms", type=int, default=40)
    e.add_argument("--poles", type=int, default=12)
    e.add_argument("--max-poles", type=int, default=20)
    e.add_argument("--max-sms", type=int, default=80)
    e.add_argument("--timeout", type=float, default=120.0)
    e.set_defaults(func=cmd_exact)

    r = sub.add_parser("report", parents=[common, scen], help="rebuild CDF tables and summary from a solution")
    r.add_argument("--solution", required=True)
    r.add_argument("--diagnostics", action="store_true")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    _set_threads(args.threads)
    try:
        return args.func(args)
    except RadioBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RADIO
    except (ScenarioError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
