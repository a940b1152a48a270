"""Command-line harness: terrain generation, costmaps, planning, benchmarks, rendering.

Exit codes: 0 success, 1 planner failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields, replace

import numpy as np

from . import bench, coupled
from .terrain import TerrainError, build_costmap, export_costmap_csv, load_heightmap, save_heightmap

log = logging.getLogger("legplan")

EXIT_OK, EXIT_PLANNER, EXIT_INPUT = 0, 1, 2


class InputError(ValueError):
    pass


def _key_values(items) -> dict[str, float]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise InputError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise InputError(f"{k.strip()} needs a number, got {v!r}") from None
    return out


def _floats(text: str, n: int, what: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(t) for t in text.split(","))
    except ValueError:
        raise InputError(f"{what} must be {n} comma-separated numbers") from None
    if len(vals) != n:
        raise InputError(f"{what} must be {n} comma-separated numbers")
    return vals


def _seeds(text: str) -> list[int]:
    """``5`` means seeds 0..4; ``1,3,7`` lists them."""
    try:
        if "," in text:
            return [int(t) for t in text.split(",")]
        n = int(text)
    except ValueError:
        raise InputError(f"bad seed list {text!r}") from None
    if n < 1:
        raise InputError("need at least one seed")
    return list(range(n))


def _scenario(args) -> bench.Scenario:
    sc = bench.get_scenario(args.scenario)
    if getattr(args, "config", None):
        cfg = coupled.load_config(args.config)
        base = coupled.PlannerConfig()
        # seed and budget come from the command line, everything else from the file
        overrides = {f.name: getattr(cfg, f.name) for f in fields(coupled.PlannerConfig)
                     if f.name not in ("seed", "max_evals") and getattr(cfg, f.name) != getattr(base, f.name)}
        sc = replace(sc, overrides=overrides)
    return sc


def _bench_config(args) -> bench.BenchConfig:
    bc = bench.BenchConfig()
    if getattr(args, "max_evals", None):
        bc = replace(bc, max_evals=args.max_evals)
    if getattr(args, "max_plans", None):
        bc = replace(bc, max_plans=args.max_plans)
    return bc


# ---------------------------------------------------------------- subcommands

def cmd_terrain(args) -> int:
    if args.inspect:
        hm = load_heightmap(args.inspect)
        h = hm.heights[hm.valid]
        print(f"dims {hm.spec.nx}x{hm.spec.ny} resolution {hm.spec.resolution} origin {hm.spec.origin}")
        print(f"height min {h.min():.3f} max {h.max():.3f} unknown {int((~hm.valid).sum())}")
        return EXIT_OK
    if not args.kind or not args.out:
        raise InputError("terrain needs --kind and --out (or --inspect FILE)")
    hm = bench.generate_terrain(args.kind, _key_values(args.param), args.length, args.width)
    save_heightmap(hm, args.out)
    log.info("wrote %s (%dx%d)", args.out, hm.spec.nx, hm.spec.ny)
    return EXIT_OK


def cmd_costmap(args) -> int:
    if args.heightmap:
        hm = load_heightmap(args.heightmap)
        banned = []
    elif args.scenario:
        sc = bench.get_scenario(args.scenario)
        hm = sc.heightmap()
        banned = bench.banned_regions(sc.kind, sc.params, hm.spec)
    else:
        raise InputError("costmap needs --heightmap or --scenario")
    weights = _floats(args.weights, 3, "--weights")
    cm = build_costmap(hm, weights, banned=banned)
    export_costmap_csv(cm, args.out)
    print(f"cells {cm.total.size} mean cost {float(np.mean(cm.total)):.4f} above 0.8: {int((cm.total > 0.8).sum())}")
    return EXIT_OK


def _run_single(args) -> bench.RunRecord:
    sc = _scenario(args)
    bc = _bench_config(args)
    fn = bench.run_coupled if args.planner == "coupled" else bench.run_decoupled
    return fn(sc, args.seed, bc)


def cmd_plan(args) -> int:
    rec = _run_single(args)
    m = rec.metrics
    print(f"{rec.planner} on {rec.scenario} seed {rec.seed}: {'success' if rec.success else 'failure'} ({rec.reason})")
    if m is not None:
        print(f"footholds {m.foothold_count} speed {m.avg_speed:.4f} m/s elc/speed {m.elc_over_speed:.4f} "
              f"violations {m.violations}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("kind,x,y\n")
            for x, y in rec.com_path:
                fh.write(f"com,{x!r},{y!r}\n")
            for x, y in rec.footholds:
                fh.write(f"foot,{x!r},{y!r}\n")
    return EXIT_OK if rec.success else EXIT_PLANNER


def cmd_bench(args) -> int:
    names = [s.strip() for s in args.scenarios.split(",") if s.strip()]
    scenarios = [bench.get_scenario(n) for n in names]
    planners = [p.strip() for p in args.planners.split(",")]
    seeds = _seeds(args.seeds)
    bc = _bench_config(args)
    records = []
    for sc in scenarios:
        records.extend(bench.run_comparison(sc, planners, seeds, bc))
    if args.csv:
        bench.write_csv(records, args.csv, args.timing)
    else:
        sys.stdout.write(bench.csv_text(records, args.timing))
    failed = sum(not r.success for r in records)
    log.info("%d runs, %d failed", len(records), failed)
    return EXIT_OK


def cmd_render(args) -> int:
    sc = _scenario(args)
    records = []
    if args.planner:
        records.append(_run_single(args))
    bench.render_svg(sc.costmap(), records, args.svg)
    log.info("wrote %s", args.svg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="legplan", description="Quadruped footstep and CoM planning tools")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("terrain", help="generate or inspect a heightmap")
    t.add_argument("--kind", choices=bench.TERRAIN_KINDS)
    t.add_argument("--param", action="append", metavar="KEY=VALUE", help="generator parameter (repeatable)")
    t.add_argument("--length", type=float, default=3.0)
    t.add_argument("--width", type=float, default=1.6)
    t.add_argument("--out")
    t.add_argument("--inspect", metavar="FILE")
    t.set_defaults(func=cmd_terrain)

    c = sub.add_parser("costmap", help="build a costmap and export it as CSV")
    c.add_argument("--heightmap")
    c.add_argument("--scenario")
    c.add_argument("--weights", default="1,1,1", help="height-deviation,slope,curvature")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_costmap)

    def run_args(p, planner_required=True):
        p.add_argument("--planner", choices=bench.PLANNERS, required=planner_required)
        p.add_argument("--scenario", default="flat")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="flat key=value planner config")
        p.add_argument("--max-evals", type=int, dest="max_evals")
        p.add_argument("--max-plans", type=int, dest="max_plans")

    p = sub.add_parser("plan", help="run one planner on one scenario")
    run_args(p)
    p.add_argument("--out", help="CSV of the CoM path and footholds")
    p.set_defaults(func=cmd_plan)

    b = sub.add_parser("bench", help="compare the planners over scenarios and seeds")
    b.add_argument("--scenarios", default="flat")
    b.add_argument("--planners", default="coupled,decoupled")
    b.add_argument("--seeds", default="1", help="count (N means 0..N-1) or comma list")
    b.add_argument("--csv")
    b.add_argument("--timing", action="store_true", help="add a wall-time column")
    b.add_argument("--max-evals", type=int, dest="max_evals")
    b.add_argument("--max-plans", type=int, dest="max_plans")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("render", help="draw a costmap and optionally one run as SVG")
    run_args(r, planner_required=False)
    r.add_argument("--svg", required=True)
    r.set_defaults(func=cmd_render)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (InputError, bench.ScenarioError, TerrainError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except coupled.PlannerError as exc:
        print(f"planner failed: {exc}", file=sys.stderr)
        return EXIT_PLANNER


if __name__ == "__main__":
    sys.exit(main())
