"""Command-line entry point for the routing pipeline."""

from __future__ import annotations

import argparse
import sys

from .errors import TicketRouterError
from .pipeline import COMMANDS, PipelineConfig, execute


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ticketrouter",
        description="Ticket-routing pipeline: synthesize a corpus, build "
                    "features, train rankers, and evaluate routing quality.")
    parser.add_argument("command", choices=COMMANDS,
                        help="pipeline stage to run")
    parser.add_argument("--config", metavar="PATH",
                        help="JSON config file; flags below override it")
    parser.add_argument("--workdir", metavar="DIR",
                        help="work directory holding all artifacts")
    parser.add_argument("--seed", type=int, metavar="INT",
                        help="master seed for every random choice")
    parser.add_argument("--neighbors", type=int, metavar="INT",
                        help="root out-neighbors per candidate set (default 10)")
    parser.add_argument("--blocks", metavar="LIST",
                        help="active feature blocks, comma-separated "
                             "(default T,G,TG,GG)")
    return parser


def config_from_args(args) -> PipelineConfig:
    cfg = PipelineConfig.from_json(args.config) if args.config else PipelineConfig()
    if args.workdir is not None:
        cfg.workdir = args.workdir
    if args.seed is not None:
        cfg.seed = args.seed
    if args.neighbors is not None:
        cfg.neighbors = args.neighbors
    if args.blocks is not None:
        cfg.blocks = tuple(b.strip() for b in args.blocks.split(",") if b.strip())
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        return execute(args.command, cfg)
    except TicketRouterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
