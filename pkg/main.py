"""
TonelliCrit - command line entry point
Multiple critical points of Tonelli action functionals
"""

import argparse
import logging
import sys

from dotenv import load_dotenv
from pydantic import ValidationError

from app.api.routes import flow, lagrangian, scenario, solve
from app.core.errors import TonelliError
from app.core.logging import setup_logging

# Load environment variables
load_dotenv()

logger = logging.getLogger("tonellicrit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tonellicrit",
        description="Critical points of Tonelli action functionals on closed manifolds",
    )
    parser.add_argument("--log-level", default=None, help="override LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in (lagrangian, flow, solve, scenario):
        module.register(subparsers)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.handler(args)
    except TonelliError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return 2
    except (FileNotFoundError, ValidationError) as exc:
        logger.error(f"invalid configuration: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
