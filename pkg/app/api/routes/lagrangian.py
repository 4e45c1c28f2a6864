"""
Model check and modification commands
"""

import logging

from app.api.routes import add_common_arguments, emit_json, load_config
from app.core.errors import ModelConfigError
from app.services.geometry import build_manifold
from app.services.models import build_hamiltonian, build_lagrangian, check_h1_h2, check_tonelli
from app.services.modification import (
    build_hamiltonian_modification, build_lagrangian_modification, modification_properties
)

logger = logging.getLogger(__name__)


def check_lagrangian(args) -> int:
    """Sampled Tonelli check of the scenario model"""
    config = load_config(args)
    L = build_lagrangian(config.model, build_manifold(config.manifold))
    report = check_tonelli(L, config.sample.model_copy(update={"seed": config.seed}))
    emit_json(report.model_dump(mode="json"))
    return 0


def modify(args) -> int:
    """Build and verify the R-modification of the scenario model"""
    config = load_config(args)
    manifold = build_manifold(config.manifold)
    sample = config.sample.model_copy(update={"seed": config.seed})
    if args.hamiltonian:
        if config.model.kind == "quartic":
            raise ModelConfigError("no builtin Hamiltonian for the quartic kind; use its Lagrangian side")
        H = build_hamiltonian(config.model, manifold)
        emit_json(check_h1_h2(H, sample_spec=sample).model_dump(mode="json"))
        mod = build_hamiltonian_modification(H, args.R, sample_spec=sample)
        emit_json(mod.report.model_dump(mode="json"))
        return 0
    L = build_lagrangian(config.model, manifold)
    C1 = check_tonelli(L, sample).C(1.0)
    mod = build_lagrangian_modification(L, args.R, C1, sample)
    emit_json(mod.report.model_dump(mode="json"))
    for verdict in modification_properties(mod, sample):
        emit_json(verdict.model_dump(mode="json"))
    return 0


def register(subparsers):
    parser = subparsers.add_parser("check-lagrangian", help="sampled Tonelli check (L1)(L2) and completeness")
    add_common_arguments(parser)
    parser.set_defaults(handler=check_lagrangian)

    parser = subparsers.add_parser("modify", help="convex quadratic R-modification with clause verification")
    add_common_arguments(parser)
    parser.add_argument("--R", type=float, required=True, help="modification radius")
    parser.add_argument("--hamiltonian", action="store_true", help="modify the Hamiltonian side instead")
    parser.set_defaults(handler=modify)
