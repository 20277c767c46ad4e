"""``weaksupcon`` command-line entry point.

Exit codes: 0 success, 1 usage or config error, 2 runtime error.
"""
import argparse
import logging
import sys

from ..errors import ConfigParse, WeakSupConError
from ..losses import LossKind
from . import pipeline
from .config import load_config

COMMANDS = ("generate", "pretrain", "extract", "mil", "pca", "report", "all")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _loss_kind(text):
    try:
        return LossKind.parse(text).value
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser():
    p = _Parser(prog="weaksupcon", description="Weakly supervised contrastive pre-training for MIL.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--out", help="output directory (overrides config output_dir)")
    p.add_argument("--seed", type=_u64, help="master seed (overrides config seed)")
    p.add_argument("--loss-kind", type=_loss_kind, action="append", dest="loss_kinds",
                   help="restrict pretrain/extract/mil/pca to this variant (repeatable)")
    p.add_argument("--split", choices=("train", "val", "test"), action="append", dest="splits",
                   help="split(s) for `pca` (default: train and test)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def run(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
        if args.loss_kinds:
            unknown = [k for k in args.loss_kinds if k not in cfg.variants]
            if unknown:
                raise UsageError(f"--loss-kind {unknown[0]} is not a configured variant {cfg.variants}")
    except (UsageError, ConfigParse) as exc:
        print(f"weaksupcon: error: {exc}", file=sys.stderr)
        return 1

    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    variants = args.loss_kinds
    try:
        if args.command == "generate":
            pipeline.cmd_generate(cfg)
        elif args.command == "pretrain":
            pipeline.cmd_pretrain(cfg, variants)
        elif args.command == "extract":
            pipeline.cmd_extract(cfg, variants)
        elif args.command == "mil":
            pipeline.cmd_mil(cfg, variants)
        elif args.command == "pca":
            pipeline.cmd_pca(cfg, variants, tuple(args.splits or ("train", "test")))
        elif args.command == "report":
            print(pipeline.cmd_report(cfg), end="")
        else:
            print(pipeline.cmd_all(cfg), end="")
        pipeline.write_run_manifest(cfg, args.command)
    except (WeakSupConError, OSError, ValueError) as exc:
        print(f"weaksupcon: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())
