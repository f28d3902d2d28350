"""Command line front end.

Subcommands mirror the evaluation workflow: `run` executes one
(scenario, approach) cell, `matrix` sweeps all 24 cells, `baseline`
exports the exhaustive verification archive, `report` aggregates
previously exported reports, and `serve` starts the operator service.
Scenario files are JSON; the DRIFTGUARD_CONFIG environment variable
overrides any --scenario path.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import runner
from .errors import DriftguardError, InvalidInputError
from .metrics import utility
from .network import QualityPoint
from .scenarios import (
    OPERATOR_HUMAN,
    ScenarioSpec,
    load_scenario,
    scenario_from_dict,
    scenario_to_dict,
)

ARCHIVE_CSV_HEADER = "cycle,option_id,pl,ec,utility,cluster"
IDEAL_CSV_HEADER = "cycle,r_star"


def _spec_from_args(args: argparse.Namespace) -> ScenarioSpec:
    spec = load_scenario(getattr(args, "scenario", None))
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "cycles", None) is not None:
        overrides["cycles"] = args.cycles
    if overrides:
        # round-trip through the dict form so the schedule is rebuilt
        # for an overridden cycle count
        data = scenario_to_dict(spec)
        data.update(overrides)
        spec = scenario_from_dict(data)
    return spec


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def _cmd_run(args: argparse.Namespace) -> int:
    spec = _spec_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = runner.run(spec, args.approach)
    for fmt in ("csv", "json"):
        path = runner.export_report(report, fmt, out / f"{args.approach}.{fmt}")
        print(f"wrote {path}")
    summary = runner.drift_summary(report)
    print(f"{summary['cell']} {args.approach}: "
          f"pre_rsm={_fmt(summary['pre_rsm'])} "
          f"drift_rsm={_fmt(summary['drift_rsm'])} "
          f"drift_utility={_fmt(summary['drift_utility'])} "
          f"fallbacks={summary['fallback_cycles']}")
    return 0


def _cmd_matrix(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(cell: str, approach: str) -> None:
        print(f"{cell}/{approach} done", flush=True)

    results = runner.run_matrix(
        out_dir=out, base_seed=args.seed, progress=progress)
    n_runs = sum(len(cell) for cell in results.values())
    print(f"wrote {n_runs} reports for {len(results)} cells under {out}")
    return 0


def _cmd_baseline(args: argparse.Namespace) -> int:
    spec = _spec_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = runner.prepare_run(spec)

    archive_path = out / "archive.csv"
    lines = [ARCHIVE_CSV_HEADER]
    for cycle in sorted(ctx.archive.cycles):
        rec = ctx.archive.cycles[cycle]
        for oid in range(ctx.archive.n_options):
            pl = float(rec.points[oid, 0])
            ec = float(rec.points[oid, 1])
            group, tier = rec.labels[oid]
            u = utility(QualityPoint(pl, ec))
            lines.append(f"{cycle},{oid},{pl:.6f},{ec:.6f},{u:.6f},{group}:{tier}")
    archive_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {archive_path}")

    ideal_path = out / "ideal.csv"
    lines = [IDEAL_CSV_HEADER]
    for cycle in sorted(ctx.ideal.r_star):
        lines.append(f"{cycle},{ctx.ideal.r_star[cycle]}")
    ideal_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {ideal_path}")
    print(f"{spec.cell_name}: m={ctx.ideal.m} cycles={spec.cycles}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    root = Path(args.compare)
    if not root.is_dir():
        raise InvalidInputError(f"{root} is not a directory")
    rows = []
    for path in sorted(root.rglob("*.json")):
        try:
            report = runner.load_report(path)
        except (DriftguardError, ValueError, KeyError):
            print(f"skipping {path}: not a run report", file=sys.stderr)
            continue
        rows.append(runner.drift_summary(report))
    if not rows:
        raise InvalidInputError(f"no run reports under {root}")

    rows.sort(key=lambda s: (s["cell"], s["approach"]))
    print(f"{'cell':<18} {'approach':<15} {'pre_rsm':>8} {'drift_rsm':>10} "
          f"{'pre_util':>9} {'drift_util':>10} {'fallbacks':>9} {'events':>7}")
    for s in rows:
        print(f"{s['cell']:<18} {s['approach']:<15} {_fmt(s['pre_rsm']):>8} "
              f"{_fmt(s['drift_rsm']):>10} {_fmt(s['pre_utility']):>9} "
              f"{_fmt(s['drift_utility']):>10} {s['fallback_cycles']:>9} "
              f"{s['events']:>7}")

    by_approach: dict[str, list[dict]] = {}
    for s in rows:
        by_approach.setdefault(s["approach"], []).append(s)
    print()
    print(f"{'approach':<15} {'cells':>5} {'mean_pre_rsm':>13} "
          f"{'mean_drift_rsm':>15} {'mean_drift_util':>16}")
    for approach in sorted(by_approach):
        group = by_approach[approach]
        print(f"{approach:<15} {len(group):>5} "
              f"{_fmt(_mean([s['pre_rsm'] for s in group])):>13} "
              f"{_fmt(_mean([s['drift_rsm'] for s in group])):>15} "
              f"{_fmt(_mean([s['drift_utility'] for s in group])):>16}")
    return 0


def _mean(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return sum(present) / len(present) if present else None


def _cmd_serve(args: argparse.Namespace) -> int:
    spec = _spec_from_args(args)
    # the service exists for console feedback, so force the human mode
    data = scenario_to_dict(spec)
    data["operator_mode"] = OPERATOR_HUMAN
    spec = scenario_from_dict(data)
    from . import service

    print(f"serving {spec.cell_name} on port {args.port}")
    service.serve(spec, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftguard",
        description="self-adaptive IoT evaluation runs and the operator console")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute one scenario with one approach")
    p.add_argument("--scenario", help="scenario config path (default: built-in base)")
    p.add_argument("--approach", required=True, choices=runner.APPROACHES)
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--cycles", type=int, help="override the cycle count")
    p.add_argument("--out", required=True, help="directory for the report files")
    p.set_defaults(handler=_cmd_run)

    p = sub.add_parser("matrix", help="run all 24 evaluation cells")
    p.add_argument("--out", required=True, help="directory for the report tree")
    p.add_argument("--seed", type=int, default=1, help="base seed (default 1)")
    p.set_defaults(handler=_cmd_matrix)

    p = sub.add_parser("baseline",
                       help="export the exhaustive verification archive")
    p.add_argument("--scenario", help="scenario config path (default: built-in base)")
    p.add_argument("--out", required=True, help="directory for archive.csv and ideal.csv")
    p.set_defaults(handler=_cmd_baseline)

    p = sub.add_parser("report", help="aggregate exported run reports")
    p.add_argument("--compare", required=True,
                   help="directory to scan for report json files")
    p.set_defaults(handler=_cmd_report)

    p = sub.add_parser("serve", help="start the operator console service")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--scenario", help="scenario config path (default: built-in base)")
    p.set_defaults(handler=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except DriftguardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
