"""Command-line front end: run episodes, print the cohesion table, batch.

Subcommands:
  run <scenario> [--seed N] [--policy herding|direct] [--out DIR]
  table2
  batch <dir> --seeds a,b,c [--policy P] [--out DIR] [--jobs N]

Exit codes: 0 success, 2 episode failure, 64 usage or scenario error.
Set HERDPLAN_LOG=debug|info|warning|error to control verbosity.

Heavy modules (simulator, optimizer) are imported inside the subcommands
that need them so that `table2` stays snappy.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

from .cohesion import regularity

EXIT_OK = 0
EXIT_EPISODE_FAILED = 2
EXIT_USAGE = 64

CSV_HEADER = (
    "stepIndex,action,remaining,delivered,pushedThisAction,efficiency,"
    "centroidGateDist,groupArea,density,regularity,zeta,components"
)

log = logging.getLogger("herdplan.cli")


# ---------------------------------------------------------------------------
# cohesion reference table ("table2")

# Regular-shape reference rows: 8 boundary samples each (corners plus edge
# midpoints for the polygons, equally spaced points for the circles),
# density fixed at 0.5.  Columns: case, sampler args, expected regularity,
# expected zeta in percent.
_SHAPE_CASES = (
    ("circle r=2", "circle", 2.0, 1.0, 50.0),
    ("circle r=4", "circle", 4.0, 1.0, 50.0),
    ("circle r=8", "circle", 8.0, 1.0, 50.0),
    ("square 4x4", "box", (4.0, 4.0), 0.934, 46.7),
    ("square 8x8", "box", (8.0, 8.0), 0.934, 46.7),
    ("rect 8x2", "box", (8.0, 2.0), 0.682, 34.1),
)

# Experimental rows: measured density and regularity with the cohesion
# percentage reported alongside them.  The product of the first two should
# reproduce the percentage; deltas are printed so rounding drift is visible.
_METHOD_CASES = (
    ("Ours", 0.846, 0.811, 68.5),
    ("MPC", 0.917, 0.685, 62.4),
    ("Landmark", 0.698, 0.828, 57.8),
    ("Manual", 0.866, 0.809, 70.1),
)

_SHAPE_DENSITY = 0.5


def _eight_point_circle(radius: float):
    pts = []
    for k in range(8):
        a = 2.0 * math.pi * k / 8.0
        pts.append((radius * math.cos(a), radius * math.sin(a)))
    return pts, math.pi * radius * radius


def _eight_point_box(width: float, height: float):
    a, b = width / 2.0, height / 2.0
    pts = [
        (a, b), (a, -b), (-a, b), (-a, -b),  # corners
        (a, 0.0), (-a, 0.0), (0.0, b), (0.0, -b),  # edge midpoints
    ]
    return pts, width * height


def benchmark_shape_rows():
    """Regular-shape cohesion rows from the 8-point boundary oracle."""
    rows = []
    for case, kind, arg, ref_reg, ref_zeta in _SHAPE_CASES:
        if kind == "circle":
            pts, beta = _eight_point_circle(arg)
        else:
            pts, beta = _eight_point_box(*arg)
        reg = regularity(pts, beta)
        rows.append(
            {
                "case": case,
                "regularity": reg,
                "zeta": reg * _SHAPE_DENSITY * 100.0,
                "ref_regularity": ref_reg,
                "ref_zeta": ref_zeta,
            }
        )
    return rows


def method_consistency_rows():
    """density x regularity x 100 for each measured row vs the reported %."""
    rows = []
    for case, density, reg, reported in _METHOD_CASES:
        product = density * reg * 100.0
        rows.append(
            {
                "case": case,
                "product": product,
                "reported": reported,
                "delta": product - reported,
            }
        )
    return rows


def cmd_table2(_args) -> int:
    print("Cohesion reference table (8 boundary samples, density 0.50)")
    print(f"{'case':<12} {'regularity':>10} {'ref':>7} {'delta':>8} "
          f"{'zeta%':>8} {'ref':>7} {'delta':>8}")
    for row in benchmark_shape_rows():
        dreg = row["regularity"] - row["ref_regularity"]
        dzeta = row["zeta"] - row["ref_zeta"]
        print(
            f"{row['case']:<12} {row['regularity']:>10.4f} "
            f"{row['ref_regularity']:>7.3f} {dreg:>+8.4f} "
            f"{row['zeta']:>8.3f} {row['ref_zeta']:>7.1f} {dzeta:>+8.3f}"
        )
    print()
    print("Consistency of measured rows (density x regularity x 100)")
    print(f"{'case':<12} {'product':>8} {'reported':>9} {'delta':>8}")
    for row in method_consistency_rows():
        print(
            f"{row['case']:<12} {row['product']:>8.3f} "
            f"{row['reported']:>9.1f} {row['delta']:>+8.3f}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# episode output files


def _fmt_float(v: float) -> str:
    return f"{v:.6f}"


def _metric_row(index: int, action: str, metrics, initial_count: int) -> str:
    coh = metrics.cohesion
    density = coh.density if coh else float("nan")
    reg = coh.regularity if coh else float("nan")
    zeta = coh.zeta if coh else float("nan")
    fields = [
        str(index),
        action,
        str(metrics.remaining_count),
        str(initial_count - metrics.remaining_count),
        str(metrics.pushed_this_action),
        f"{metrics.pushing_efficiency:.3f}",
        _fmt_float(metrics.centroid_gate_distance),
        _fmt_float(metrics.group_area),
        _fmt_float(density),
        _fmt_float(reg),
        f"{zeta:.3f}",
        str(metrics.connected_components),
    ]
    return ",".join(fields)


def write_metrics_csv(path: Path, records, initial_count: int) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for rec in records:
            fh.write(_metric_row(rec.index, rec.action, rec.metrics, initial_count) + "\n")


def _final_zeta(records):
    for rec in reversed(records):
        if rec.metrics.cohesion is not None:
            return rec.metrics.cohesion.zeta
    return None


def _write_outputs(out_dir: Path, scenario, result, elapsed: float) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out_dir / "metrics.csv", result.records, result.initial_count)
    with open(out_dir / "actions.log", "w", encoding="utf-8", newline="\n") as fh:
        for action in result.actions:
            fh.write(action + "\n")
    summary = {
        "scenario": scenario.name,
        "seed": scenario.world.rng_seed,
        "policy": scenario.policy,
        "success": result.success,
        "failureReason": result.failure_reason,
        "initialCount": result.initial_count,
        "delivered": result.delivered,
        "deliveredFraction": round(result.delivered_fraction, 6),
        "actionCount": len(result.actions),
        "finalZeta": _final_zeta(result.records),
        "wallClockSeconds": round(elapsed, 3),
    }
    with open(out_dir / "summary.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary


def _make_frame_hook(out_dir: Path, scenario):
    from . import render
    from .sim import group_contour
    import numpy as np

    frames = out_dir / "frames"
    frames.mkdir(parents=True, exist_ok=True)
    config, mconfig = scenario.world, scenario.metrics

    def hook(index, action, state, waypoints, sweeps):
        contour = None
        if state.remaining_count >= 3:
            try:
                _, recon = group_contour(
                    state.positions, config.particle_radius, mconfig
                )
                contour = recon.points
            except ValueError:
                contour = None
        sweep = np.concatenate(sweeps, axis=0) if sweeps else None
        svg = render.render_frame(
            state,
            config,
            waypoints=waypoints,
            sweep=sweep,
            contour=contour,
            caption=f"{index:03d} {action} remaining={state.remaining_count}",
        )
        name = f"frame_{index:04d}_{action.lower()}.svg"
        with open(frames / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(svg)

    return hook


def _run_scenario(scenario, out_dir: Path, frames: bool) -> dict:
    from .episode import run_episode

    hook = _make_frame_hook(out_dir, scenario) if frames else None
    started = time.perf_counter()
    result = run_episode(
        scenario.world,
        scenario.distribution,
        metrics_config=scenario.metrics,
        mpc_config=scenario.mpc,
        thresholds=scenario.thresholds,
        policy=scenario.policy,
        frame_hook=hook,
    )
    elapsed = time.perf_counter() - started
    return _write_outputs(out_dir, scenario, result, elapsed)


def cmd_run(args) -> int:
    from .scenario import ScenarioError, load_scenario, resolve_scenario
    from .sim import PackingError

    try:
        path = resolve_scenario(args.scenario)
        scenario = load_scenario(path, seed=args.seed, policy=args.policy)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out_dir = Path(
        args.out
        or scenario.out_dir
        or f"runs/{scenario.name}_seed{scenario.world.rng_seed}"
    )
    try:
        summary = _run_scenario(scenario, out_dir, frames=not args.no_frames)
    except PackingError as exc:
        print(f"episode failed: {exc}", file=sys.stderr)
        return EXIT_EPISODE_FAILED
    print(
        f"{summary['scenario']} seed={summary['seed']} policy={summary['policy']}: "
        f"delivered {summary['delivered']}/{summary['initialCount']} "
        f"in {summary['actionCount']} actions "
        f"({summary['wallClockSeconds']:.3f}s) -> {out_dir}"
    )
    if not summary["success"]:
        print(f"episode failed: {summary['failureReason']}", file=sys.stderr)
        return EXIT_EPISODE_FAILED
    return EXIT_OK


# ---------------------------------------------------------------------------
# batch


def _batch_task(task) -> dict:
    """Run one (scenario path, seed, policy, out) episode; pool-friendly."""
    from .scenario import load_scenario

    path, seed, policy, out_root = task
    scenario = load_scenario(path, seed=seed, policy=policy)
    out_dir = Path(out_root) / f"{scenario.name}_s{seed}"
    return _run_scenario(scenario, out_dir, frames=False)


def _batch_row(summary: dict) -> str:
    zeta = summary["finalZeta"]
    return ",".join(
        [
            summary["scenario"],
            str(summary["seed"]),
            summary["policy"],
            "1" if summary["success"] else "0",
            str(summary["initialCount"]),
            str(summary["delivered"]),
            f"{summary['deliveredFraction']:.6f}",
            str(summary["actionCount"]),
            "" if zeta is None else f"{zeta:.3f}",
            summary["failureReason"] or "",
        ]
    )


BATCH_HEADER = (
    "scenario,seed,policy,success,initial,delivered,fraction,actions,"
    "finalZeta,failureReason"
)


def cmd_batch(args) -> int:
    from .scenario import ScenarioError, load_scenario

    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    except ValueError:
        print(f"error: bad seed list {args.seeds!r}", file=sys.stderr)
        return EXIT_USAGE
    if not seeds:
        print("error: empty seed list", file=sys.stderr)
        return EXIT_USAGE
    scen_dir = Path(args.scenario_dir)
    paths = sorted(scen_dir.glob("*.scn"))
    if not paths:
        print(f"error: no .scn files in {scen_dir}", file=sys.stderr)
        return EXIT_USAGE

    # Validate every scenario up front so config errors abort the batch
    # before any episode runs.
    try:
        for p in paths:
            load_scenario(p, policy=args.policy)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out_root = Path(args.out or "batch_out")
    out_root.mkdir(parents=True, exist_ok=True)
    tasks = [(str(p), seed, args.policy, str(out_root)) for p in paths for seed in seeds]

    if args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            summaries = list(pool.map(_batch_task, tasks))
    else:
        summaries = [_batch_task(t) for t in tasks]

    csv_path = out_root / "batch.csv"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(BATCH_HEADER + "\n")
        for summary in summaries:
            fh.write(_batch_row(summary) + "\n")

    failures = sum(0 if s["success"] else 1 for s in summaries)
    print(f"{len(summaries)} episodes, {failures} failures -> {csv_path}")
    return EXIT_EPISODE_FAILED if failures else EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit with the config error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="herdplan", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_run = sub.add_parser("run", help="run one scenario episode")
    p_run.add_argument("scenario", help="scenario file path or bundled name")
    p_run.add_argument("--seed", type=int, default=None, help="world RNG seed")
    p_run.add_argument("--policy", choices=("herding", "direct"), default=None)
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument(
        "--no-frames", action="store_true", help="skip SVG frame emission"
    )
    p_run.set_defaults(func=cmd_run)

    p_tbl = sub.add_parser("table2", help="print the cohesion reference table")
    p_tbl.set_defaults(func=cmd_table2)

    p_batch = sub.add_parser("batch", help="run scenario x seed grid")
    p_batch.add_argument("scenario_dir", help="directory containing .scn files")
    p_batch.add_argument("--seeds", required=True, help="comma-separated seeds")
    p_batch.add_argument("--policy", choices=("herding", "direct"), default=None)
    p_batch.add_argument("--out", default=None, help="output directory")
    p_batch.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p_batch.set_defaults(func=cmd_batch)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("HERDPLAN_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
