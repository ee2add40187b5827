"""Command-line entry point.

One subcommand per pipeline stage plus `run-all` (the whole chain, with
`--stage` to stop early) and `wm-info` (checkpoint inspection). Every
subcommand takes `--config <yaml>`, `--seed <int>`, `--out <dir>`; flag
values override the config file.
"""
from __future__ import annotations

import argparse
import json
import sys

from .config import load_config
from .pipeline import STAGES, PipelineError, run_all, run_stage


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panelwm",
        description="Consumer-panel world model: simulate, train, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None, help="YAML config file")
        p.add_argument("--seed", type=int, default=None, help="root seed override")
        p.add_argument("--out", default=None, help="output directory override")

    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        add_common(p)
        if stage == "encode":
            p.add_argument("--export-csv", action="store_true", help="also write encoded.csv")

    p = sub.add_parser("run-all", help="run every stage in order")
    add_common(p)
    p.add_argument("--stage", default=None, choices=STAGES, help="stop after this stage")

    p = sub.add_parser("wm-info", help="dump world-model checkpoint info as JSON")
    p.add_argument("checkpoint", help="path to world_model.ckpt")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "wm-info":
        from .artifacts import wm_info

        print(json.dumps(wm_info(args.checkpoint), indent=2, sort_keys=True))
        return 0
    overrides = {"seed": args.seed, "out": args.out}
    if getattr(args, "export_csv", False):
        overrides["encode_csv"] = True
    cfg = load_config(args.config, overrides)
    try:
        if args.command == "run-all":
            run_all(cfg, until=args.stage)
        else:
            run_stage(cfg, args.command)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
