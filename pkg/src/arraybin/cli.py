"""``arraybin`` command line: synth, features, mac-report, train-toy, render, eval."""
from __future__ import annotations

import argparse
import sys

from . import pipeline
from .config import load_config
from .errors import ArraybinError

VERBS = {
    "synth": pipeline.cmd_synth,
    "features": pipeline.cmd_features,
    "mac-report": pipeline.cmd_mac_report,
    "train-toy": pipeline.cmd_train_toy,
    "render": pipeline.cmd_render,
    "eval": pipeline.cmd_eval,
}


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("--jobs must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=_u64, help="override the config seed")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--jobs", type=_positive, help="worker processes over scenes")
    parser = argparse.ArgumentParser(prog="arraybin", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        sub.add_parser(verb, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out, jobs=args.jobs)
        VERBS[args.verb](cfg)
    except ArraybinError as exc:
        print(f"arraybin {args.verb}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"arraybin {args.verb}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
