"""
Builtin scenarios and the property suite
"""

import logging

from app.api.routes import add_common_arguments, emit_json, load_config, output_dir
from app.schemas.analysis import Verdict
from app.services.harness import list_scenarios, property_suite, run_scenario
from app.services.report import emit_report

logger = logging.getLogger(__name__)


def scenario(args) -> int:
    config = load_config(args, args.name)
    timings = {}
    manifest = run_scenario(config, timings=timings)
    out = output_dir(config)
    emit_report(manifest, out, timings=timings)
    emit_json({"scenario": manifest.scenario, "passed": manifest.passed, "certified": manifest.certified_count,
               "out": str(out)})
    return 0 if manifest.passed else 1


def suite(args) -> int:
    verdicts = property_suite(seed=args.seed or 0)
    for v in verdicts:
        emit_json(v.model_dump(mode="json"))
    return 0 if all(v.verdict == Verdict.PASS for v in verdicts) else 1


def register(subparsers):
    parser = subparsers.add_parser("scenario", help=f"run a builtin scenario ({', '.join(list_scenarios())})")
    parser.add_argument("name")
    add_common_arguments(parser, config_required=False)
    parser.set_defaults(handler=scenario)

    parser = subparsers.add_parser("suite", help="property suite over the builtin model zoo")
    parser.add_argument("--seed", type=int, default=None)
    parser.set_defaults(handler=suite)
