"""Command line entry point: ``trailer-nav {train,run,bench,plot}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .exceptions import TrailerNavError
from .scenario import DESK, PAPER, load_scenario, shipped_scenario_path

logger = logging.getLogger("trailer_nav")


def _scenario(args):
    sc = load_scenario(args.scenario or shipped_scenario_path("paper"))
    sc = sc.with_profile(PAPER if args.paper_scale else DESK)
    if getattr(args, "seed", None) is not None:
        sc.mppi = replace(sc.mppi, seed=args.seed)
        sc.encoder.train = replace(sc.encoder.train, seed=args.seed)
    if getattr(args, "distance", None):
        sc.distance_mode = args.distance
    if getattr(args, "max_steps", None):
        sc.max_steps = args.max_steps
    return sc


def cmd_train(args) -> int:
    from .sim import train_encoders

    sc = _scenario(args)
    paths = train_encoders(sc, args.out)
    for p in paths:
        print(p)
    return 0


def cmd_run(args) -> int:
    from .sim import run_scenario

    sc = _scenario(args)
    result = run_scenario(sc, args.out, encoder_dir=args.encoder_dir, plots=not args.no_plots)
    summary = result.summary()
    print(json.dumps({k: summary[k] for k in ("success", "steps_used", "min_clearance",
                                              "final_position_error", "final_heading_error",
                                              "mean_wall_ms")}))
    return 0 if result.success else 1


def cmd_bench(args) -> int:
    from .sim import bench_csv, benchmark_distance

    sc = _scenario(args)
    rows = benchmark_distance(sc, args.queries, encoder_dir=args.encoder_dir, seed=args.seed or 0)
    text = bench_csv(rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.csv").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_plot(args) -> int:
    from .plots import render_plots
    from .sim import load_trajectory

    sc = _scenario(args)
    run_dir = Path(args.run_dir)
    result = load_trajectory(run_dir / "trajectory.csv")
    for p in render_plots(result, sc, args.out or run_dir):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trailer-nav", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help, out_required=True):
        p.add_argument("--scenario", type=Path, help="scenario YAML (default: shipped paper scenario)")
        p.add_argument("--out", type=Path, help=out_help, required=out_required)
        p.add_argument("--seed", type=int, help="controller and training seed override")
        p.add_argument("--paper-scale", action="store_true",
                       help="K=1000 rollouts, 100k samples and 5000 epochs per encoder")

    p = sub.add_parser("train", help="train one encoder per body polygon")
    common(p, "directory for encoder weights and loss curves")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="closed-loop run; exit code 0 iff the goal is reached")
    common(p, "directory for trajectory, diagnostics, summary and plots")
    p.add_argument("--distance", choices=("exact", "encoder"), help="distance mode override")
    p.add_argument("--encoder-dir", type=Path, help="trained encoder directory")
    p.add_argument("--max-steps", type=int, help="step budget override")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="compare closed-form, dual and encoder distances")
    common(p, "directory for bench.csv")
    p.add_argument("--encoder-dir", type=Path, help="trained encoder directory")
    p.add_argument("--queries", type=int, default=200)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plot", help="re-render plots for a finished run")
    common(p, "output directory (default: the run directory)", out_required=False)
    p.add_argument("run_dir", type=Path, help="directory holding trajectory.csv")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrailerNavError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
