"""
CLI command groups; each module exposes register(subparsers)
"""

import argparse
import json
import sys
from pathlib import Path

from app.core.config import settings
from app.services.harness import apply_overrides, load_scenario


def add_common_arguments(parser: argparse.ArgumentParser, config_required: bool = True):
    parser.add_argument("--config", required=config_required, help="scenario name or TOML config path")
    parser.add_argument("--out", default=None, help=f"output directory (default {settings.OUTPUT_ROOT}/<scenario>)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--mesh", type=int, default=None)
    parser.add_argument("--grid-density", dest="grid_density", type=int, default=None)


def load_config(args, name=None):
    config = load_scenario(name or args.config)
    return apply_overrides(config, seed=args.seed, mesh=args.mesh, grid_density=args.grid_density, output=args.out)


def output_dir(config) -> Path:
    return Path(config.output) if config.output else Path(settings.OUTPUT_ROOT) / config.name


def emit_json(payload):
    """One JSON document per line on stdout"""
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
