"""Command line entry point: ``holostream {train,evaluate,sweep,report}``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from . import experiments as ex


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, episode=cfg.episode.replace(seed=args.seed),
                                  train=dataclasses.replace(cfg.train, seed=args.seed))
    return cfg


def _schemes(args):
    return tuple(args.schemes.split(",")) if args.schemes else None


def cmd_train(args) -> int:
    cfg = _load(args)
    paths = ex.run_training(cfg, args.out, schemes=_schemes(args), episodes=args.episodes)
    for (scheme, gamma), path in paths.items():
        print(f"{scheme} gamma={gamma:g}: {path}")
    print(f"convergence log: {Path(args.out) / 'convergence.csv'}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    rows = ex.run_sweep(cfg, "W", args.checkpoints, values=[cfg.episode.W], schemes=_schemes(args),
                        episodes=args.episodes)
    ex.write_rows(rows, Path(args.out) / "evaluate.csv", timing=args.timing)
    print(ex.format_summary(ex.aggregate(rows)))
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    variables = ex.VARIABLES if args.variable == "all" else (args.variable,)
    for variable in variables:
        rows = ex.run_sweep(cfg, variable, args.checkpoints, schemes=_schemes(args),
                            episodes=args.episodes, workers=args.workers)
        path = Path(args.out) / f"sweep_{variable}.csv"
        ex.write_rows(rows, path, timing=args.timing)
        print(f"{variable}: {len(rows)} rows -> {path}")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    rows = []
    for path in sorted(out.glob("sweep_*.csv")):
        rows += ex.read_rows(path)
    if not rows:
        print(f"no sweep_*.csv files in {out}", file=sys.stderr)
        return 1
    conv = out / "convergence.csv"
    summary = ex.emit_report(rows, out, ex.read_convergence(conv) if conv.exists() else None)
    print(ex.format_summary(summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="holostream",
                                     description="Cooperative holographic video streaming experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoints=False):
        p.add_argument("--config", help="INI experiment config (defaults if omitted)")
        p.add_argument("--seed", type=int, help="override the scenario and training seed")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--schemes", help="comma separated subset, e.g. proposed,B1")
        p.add_argument("--episodes", type=int, help="override the episode count")
        if checkpoints:
            p.add_argument("--checkpoints", help="checkpoint directory (default <out>/checkpoints)")
            p.add_argument("--timing", action="store_true", help="add a wall_time_s column")

    p = sub.add_parser("train", help="train learned schemes, write checkpoints and convergence.csv")
    common(p)
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("evaluate", help="evaluate schemes at the operating point")
    common(p, checkpoints=True)
    p.set_defaults(func=cmd_evaluate)
    p = sub.add_parser("sweep", help="sweep one variable (or all) and write sweep_<variable>.csv")
    common(p, checkpoints=True)
    p.add_argument("--variable", default="all", choices=ex.VARIABLES + ("all",))
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("report", help="turn sweep and convergence CSVs into figure CSVs")
    p.add_argument("--out", default="results", help="directory holding the sweep CSVs")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "checkpoints", "unset") is None:
        args.checkpoints = str(Path(args.out) / "checkpoints")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
