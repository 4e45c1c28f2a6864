"""
Flow integration and reachable-set commands
"""

import logging

import numpy as np

from app.api.routes import add_common_arguments, emit_json, load_config
from app.services.dynamics import FlowState, estimate_R_A, integrate
from app.services.geometry import ChartPoint, build_manifold
from app.services.models import build_lagrangian, check_tonelli

logger = logging.getLogger(__name__)


def flow(args) -> int:
    """Integrate the Euler-Lagrange flow from one state and print the sampled trajectory"""
    config = load_config(args)
    manifold = build_manifold(config.manifold)
    L = build_lagrangian(config.model, manifold)
    chart = args.chart or manifold.default_chart
    state = FlowState(args.t0, ChartPoint(chart, np.asarray(args.q, dtype=float)), np.asarray(args.v, dtype=float))
    traj = integrate(L, state, (args.t0, args.t1), config.tolerances.flow_tol, args.samples)
    for k in range(len(traj.times)):
        emit_json({"t": float(traj.times[k]), "chart": traj.charts[k], "q": traj.q[k].tolist(),
                   "v": traj.x[k].tolist(), "energy": float(traj.invariant[k])})
    return 0


def estimate_ra(args) -> int:
    """A-priori speed bound R(A) from flow images of the seed ball"""
    config = load_config(args)
    L = build_lagrangian(config.model, build_manifold(config.manifold))
    C1 = check_tonelli(L, config.sample.model_copy(update={"seed": config.seed})).C(1.0)
    estimate = estimate_R_A(L, args.A, C1, config.grid_density, config.tolerances.flow_tol)
    emit_json(estimate.model_dump(mode="json"))
    return 0


def register(subparsers):
    parser = subparsers.add_parser("flow", help="integrate the Euler-Lagrange flow")
    add_common_arguments(parser)
    parser.add_argument("--q", type=float, nargs="+", required=True)
    parser.add_argument("--v", type=float, nargs="+", required=True)
    parser.add_argument("--chart", default=None)
    parser.add_argument("--t0", type=float, default=0.0)
    parser.add_argument("--t1", type=float, default=1.0)
    parser.add_argument("--samples", type=int, default=11)
    parser.set_defaults(handler=flow)

    parser = subparsers.add_parser("estimate-ra", help="reachable-set speed bound R(A)")
    add_common_arguments(parser)
    parser.add_argument("--A", type=float, required=True, help="action level")
    parser.set_defaults(handler=estimate_ra)
