"""Command-line entry point.

Subcommands correspond to pipeline stages; each reads the same configuration
file and writes its artifacts under the output directory:

    neurorate synth --config run.ini --out runs/demo
    neurorate brainrate --config run.ini --out runs/demo
    ...
    neurorate report --config run.ini --out runs/demo

``NEURORATE_LOG`` sets the log level (DEBUG, INFO, WARNING, ...).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .errors import NeurorateError
from .pipeline import STAGES, load_config, run_stage


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neurorate",
        description="Self-supervised brain-rate modelling pipeline over multi-channel EEG.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", metavar="PATH", default=None, help="run configuration file (INI)")
        p.add_argument("--seed", metavar="N", type=int, default=None, help="override the run seed")
        p.add_argument("--threads", metavar="N", type=int, default=None, help="intra-stage parallelism")
        p.add_argument("--out", metavar="DIR", default=None, help="output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("NEURORATE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, threads=args.threads, out=args.out)
        run_stage(args.command, cfg)
    except NeurorateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
