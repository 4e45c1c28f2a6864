"""
Solve and Morse index commands
"""

import logging
from pathlib import Path

from app.api.routes import add_common_arguments, emit_json, load_config, output_dir
from app.schemas.records import CriticalPointRecord
from app.services.geometry import build_manifold
from app.services.harness import run_scenario
from app.services.models import build_lagrangian
from app.services.pathspace import DiscretePath, build_boundary
from app.services.report import emit_report
from app.services.solver import morse_index

logger = logging.getLogger(__name__)


def solve(args) -> int:
    """Full pipeline; one record per solution on stdout, report files under --out"""
    config = load_config(args)
    timings = {}
    manifest = run_scenario(config, timings=timings)
    emit_report(manifest, output_dir(config), timings=timings)
    for record in manifest.records:
        emit_json(record.model_dump(mode="json"))
    return 0 if manifest.passed else 1


def index(args) -> int:
    """Recompute (m, m*) for stored records"""
    config = load_config(args)
    manifold = build_manifold(config.manifold)
    L = build_lagrangian(config.model, manifold)
    bc = build_boundary(config.boundary, manifold)
    for line in Path(args.records).read_text().splitlines():
        if not line.strip():
            continue
        record = CriticalPointRecord.model_validate_json(line)
        path = DiscretePath.from_record(record.path, manifold)
        m, m_star, status = morse_index(L, bc, path, not args.no_refine, config.tolerances)
        emit_json({"family": record.family, "action": record.action, "morse_index": m,
                   "large_morse_index": m_star, "index_status": status.value})
    return 0


def register(subparsers):
    parser = subparsers.add_parser("solve", help="find and certify critical points for a config")
    add_common_arguments(parser)
    parser.set_defaults(handler=solve)

    parser = subparsers.add_parser("index", help="Morse index of stored solution records")
    add_common_arguments(parser)
    parser.add_argument("--records", required=True, help="records.jsonl from a previous run")
    parser.add_argument("--no-refine", action="store_true", help="skip the doubled-mesh stability check")
    parser.set_defaults(handler=index)
