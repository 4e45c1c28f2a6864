"""
Euler-Lagrange and Hamiltonian flows, reachable-set estimates and
speed-bound certificates
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from app.core.config import settings
from app.core.errors import FlowBlowupError, SingularFiberHessianError
from app.schemas.analysis import Certificate, CertificateStatus, ReachableSetEstimate
from app.services.geometry import ChartPoint, ManifoldModel
from app.services.models import (
    HamiltonianModel, LagrangianModel, action_integrand, jet_many, unit_directions
)
from app.services.pathspace import DiscretePath, action, hamiltonian_action

logger = logging.getLogger(__name__)

REACHABLE_MARGIN = 1.2
TIME_GRID = 11
MAX_STEPS = 200000

# Dormand-Prince 5(4) tableau
DP_NODES = [0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0]
DP_TABLE = {
    1: [1 / 5],
    2: [3 / 40, 9 / 40],
    3: [44 / 45, -56 / 15, 32 / 9],
    4: [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    5: [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    6: [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
}
DP_HIGH = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
DP_LOW = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


@dataclass(frozen=True)
class FlowState:
    """Time, base point and velocity (or momentum when covariant)"""
    t: float
    point: ChartPoint
    fiber: np.ndarray
    covariant: bool = False


@dataclass
class Trajectory:
    """States recorded at output times with the invariant (energy or H) value"""
    times: np.ndarray
    charts: Tuple[str, ...]
    q: np.ndarray
    x: np.ndarray
    invariant: np.ndarray
    covariant: bool = False

    def state(self, k: int = -1) -> FlowState:
        return FlowState(float(self.times[k]), ChartPoint(self.charts[k], self.q[k]), self.x[k], self.covariant)


@dataclass
class BatchFlow:
    """Batched flow output, indexed [output time, state]"""
    times: np.ndarray
    charts: np.ndarray
    q: np.ndarray
    x: np.ndarray


# ---------------------------------------------------------- vector fields
def euler_lagrange_field(L: LagrangianModel):
    """(q, v) -> (v, v') with v' = L_vv^-1 [L_q - L_tv - L_vq v]"""
    def field(t, charts, q, v):
        jet = jet_many(L, t, charts, q, v)
        rhs = jet.d_q - jet.d_tv - np.einsum("mkj,mk->mj", jet.d_qv, v)
        try:
            acc = np.linalg.solve(jet.d_vv, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SingularFiberHessianError("fiber Hessian singular along the flow; (L1) fails") from exc
        return v, acc
    return field


def hamiltonian_field(H: HamiltonianModel):
    """(q, p) -> (dH/dp, -dH/dq)"""
    def field(t, charts, q, p):
        dq = np.empty_like(q)
        dp = np.empty_like(p)
        for cid in np.unique(charts):
            mask = charts == cid
            _, d_q, d_p, _ = H.first_derivatives(t[mask], cid, q[mask], p[mask])
            dq[mask], dp[mask] = d_p, -d_q
        return dq, dp
    return field


# ------------------------------------------------------------- integrator
def _rebase_states(manifold: ManifoldModel, charts, q, x, covariant: bool):
    new_charts, new_q = manifold.rebase_many(charts, q)
    new_x = x.copy()
    moved = new_charts != charts
    if np.any(moved):
        for src in np.unique(charts[moved]):
            for dst in np.unique(new_charts[moved & (charts == src)]):
                mask = moved & (charts == src) & (new_charts == dst)
                _, new_x[mask] = manifold.pushforward(src, dst, q[mask], x[mask], covariant=covariant)
    return new_charts, new_q, new_x


def flow_batch(field: Callable, manifold: ManifoldModel, t0: float, t1: float, charts, q, x,
               covariant: bool = False, tol: Optional[float] = None,
               output_times: Optional[Sequence[float]] = None, assumption: str = "(L3)") -> BatchFlow:
    """Adaptive Dormand-Prince 5(4) with a common step and chart rebasing after each accepted step"""
    tol = tol or settings.FLOW_TOL
    charts = np.asarray(charts, dtype=object).copy()
    q = np.array(q, dtype=float)
    x = np.array(x, dtype=float)
    m, n = q.shape
    direction = 1.0 if t1 >= t0 else -1.0
    outputs = np.asarray(output_times if output_times is not None else [t0, t1], dtype=float)
    outputs = outputs[np.argsort(direction * outputs)]
    out_q = np.empty((len(outputs), m, n))
    out_x = np.empty((len(outputs), m, n))
    out_c = np.empty((len(outputs), m), dtype=object)

    t = float(t0)
    k_out = 0
    while k_out < len(outputs) and direction * (outputs[k_out] - t) <= 0:
        out_q[k_out], out_x[k_out], out_c[k_out] = q, x, charts
        k_out += 1
    span = abs(t1 - t0)
    h = direction * min(0.05, span) if span > 0 else 0.0
    steps = 0
    while k_out < len(outputs):
        target = outputs[k_out]
        h = direction * min(abs(h), abs(target - t))
        if abs(h) < 1e-12 * (1.0 + abs(t)):
            logger.error(f"Step size underflow at t = {t:.6g}")
            raise FlowBlowupError(f"step size underflow at t = {t:.6g}", assumption=assumption, t=t)
        y = np.concatenate([q, x], axis=1)
        stages = []
        for i, c in enumerate(DP_NODES):
            yi = y.copy()
            for j, a in enumerate(DP_TABLE.get(i, [])):
                if a:
                    yi = yi + h * a * stages[j]
            dq, dx = field(np.full(m, t + c * h), charts, yi[:, :n], yi[:, n:])
            stages.append(np.concatenate([dq, dx], axis=1))
        k = np.stack(stages)
        y_high = y + h * np.einsum("s,smd->md", DP_HIGH, k)
        y_low = y + h * np.einsum("s,smd->md", DP_LOW, k)
        if not np.all(np.isfinite(y_high)):
            h *= 0.25
            continue
        scale = tol + tol * np.maximum(np.abs(y), np.abs(y_high))
        err = float(np.sqrt(np.mean(((y_high - y_low) / scale) ** 2, axis=1)).max())
        steps += 1
        if steps > MAX_STEPS:
            raise FlowBlowupError(f"step budget exhausted at t = {t:.6g}", assumption=assumption, t=t)
        if err <= 1.0:
            t = target if abs(target - (t + h)) <= 1e-14 * (1.0 + abs(target)) else t + h
            charts, q, x = _rebase_states(manifold, charts, y_high[:, :n], y_high[:, n:], covariant)
            while k_out < len(outputs) and direction * (outputs[k_out] - t) <= 0:
                out_q[k_out], out_x[k_out], out_c[k_out] = q, x, charts
                k_out += 1
        factor = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        h = h * factor
    return BatchFlow(times=outputs, charts=out_c, q=out_q, x=out_x)


def _trajectory(batch: BatchFlow, invariant: np.ndarray, covariant: bool) -> Trajectory:
    return Trajectory(times=batch.times, charts=tuple(str(c) for c in batch.charts[:, 0]), q=batch.q[:, 0],
                      x=batch.x[:, 0], invariant=invariant, covariant=covariant)


def _grid(t_span, n_out):
    return np.linspace(t_span[0], t_span[1], n_out)


def integrate(L: LagrangianModel, state: FlowState, t_span: Tuple[float, float], tol: Optional[float] = None,
              n_out: int = 11) -> Trajectory:
    """Euler-Lagrange flow of L from state over t_span"""
    times = _grid(t_span, n_out)
    batch = flow_batch(euler_lagrange_field(L), L.manifold, t_span[0], t_span[1], [state.point.chart],
                       state.point.coords[None], state.fiber[None], tol=tol, output_times=times)
    energy = np.array([float(L.energy(times[k], batch.charts[k, 0], batch.q[k], batch.x[k])[0])
                       for k in range(len(times))])
    return _trajectory(batch, energy, covariant=False)


def hamiltonian_integrate(H: HamiltonianModel, state: FlowState, t_span: Tuple[float, float],
                          tol: Optional[float] = None, n_out: int = 11) -> Trajectory:
    """Flow of X_H = (dH/dp, -dH/dq) from state over t_span"""
    times = _grid(t_span, n_out)
    batch = flow_batch(hamiltonian_field(H), H.manifold, t_span[0], t_span[1], [state.point.chart],
                       state.point.coords[None], state.fiber[None], covariant=True, tol=tol,
                       output_times=times, assumption="(H3)")
    values = np.array([float(H.evaluate(times[k], batch.charts[k, 0], batch.q[k], batch.x[k])[0])
                       for k in range(len(times))])
    return _trajectory(batch, values, covariant=True)


def action_identity_residual(H: HamiltonianModel, state: FlowState, n_out: int = 257,
                             tol: Optional[float] = None) -> Tuple[float, float]:
    """Hamiltonian action of an orbit on [0, 1] and the integral of DH[Y] - H along it"""
    traj = hamiltonian_integrate(H, state, (0.0, 1.0), tol=tol, n_out=n_out)
    path = DiscretePath(H.manifold, traj.q, traj.charts)
    a_h = hamiltonian_action(H, path, traj.x)
    integrand = np.array([float(action_integrand(H, traj.times[k], traj.charts[k], traj.q[k][None], traj.x[k][None])[0])
                          for k in range(len(traj.times))])
    return a_h, float(trapezoid(integrand, traj.times))


# --------------------------------------------------------- reachable sets
def _seeds(manifold: ManifoldModel, radius: float, grid_density: int, covariant: bool):
    charts, points = manifold.sample_points(grid_density ** manifold.dim)
    radii = np.linspace(0.0, radius, max(2, (grid_density + 1) // 2))
    dirs = unit_directions(manifold.dim, 8)
    ip, ir, idir = (a.ravel() for a in np.meshgrid(np.arange(len(points)), np.arange(len(radii)),
                                                     np.arange(len(dirs)), indexing="ij"))
    ch = charts[ip]
    q = points[ip]
    u = dirs[idir]
    x = radii[ir][:, None] * u / manifold.norm_many(ch, q, u, covariant=covariant)[:, None]
    return ch, q, x


def _propagated_max(field, manifold, autonomous: bool, charts, q, x, covariant, tol, assumption) -> float:
    grid = np.linspace(0.0, 1.0, TIME_GRID)
    best = float(manifold.norm_many(charts, q, x, covariant=covariant).max())

    def record(batch):
        nonlocal best
        for k in range(len(batch.times)):
            best = max(best, float(manifold.norm_many(batch.charts[k], batch.q[k], batch.x[k], covariant=covariant).max()))

    if autonomous:
        # phi_t o phi_s^-1 depends on t - s only
        for end in (1.0, -1.0):
            record(flow_batch(field, manifold, 0.0, end, charts, q, x, covariant, tol, end * grid, assumption))
        return best
    for s in grid:
        if s < 1.0:
            record(flow_batch(field, manifold, s, 1.0, charts, q, x, covariant, tol, grid[grid >= s], assumption))
        if s > 0.0:
            record(flow_batch(field, manifold, s, 0.0, charts, q, x, covariant, tol, grid[grid <= s], assumption))
    return best


def estimate_R_A(model: LagrangianModel, A: float, C1: float, grid_density: Optional[int] = None,
                 tol: Optional[float] = None, margin: float = REACHABLE_MARGIN) -> ReachableSetEstimate:
    """Max speed over flow images of the seed ball |v| <= A + C(1), times a safety margin"""
    density = grid_density or settings.DEFAULT_GRID_DENSITY
    radius = max(0.0, A + C1)
    charts, q, x = _seeds(model.manifold, radius, density, covariant=False)
    best = _propagated_max(euler_lagrange_field(model), model.manifold, model.autonomous, charts, q, x,
                           False, tol, "(L3)")
    estimate = ReachableSetEstimate(A=A, C1=C1, seed_radius=radius, grid_density=density, time_grid=TIME_GRID,
                                    seeds=len(q), max_norm=best, margin=margin,
                                    R_A=max(margin * best, radius), side="lagrangian")
    logger.info(f"Reachable set: A={A:.6g} C1={C1:.6g} max|v|={best:.6g} R_A={estimate.R_A:.6g}")
    return estimate


def _inverse_growth(a: Callable, level: float, upper: float = 1e6) -> float:
    """Largest r with a(r) <= level for nondecreasing a, by bisection"""
    if a(np.array([0.0]))[0] > level:
        return 0.0
    lo, hi = 0.0, 1.0
    while a(np.array([hi]))[0] <= level and hi < upper:
        lo, hi = hi, 2.0 * hi
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if a(np.array([mid]))[0] <= level:
            lo = mid
        else:
            hi = mid
    return lo


def estimate_R_A_hamiltonian(model: HamiltonianModel, A: float, a: Callable, grid_density: Optional[int] = None,
                             tol: Optional[float] = None, margin: float = REACHABLE_MARGIN) -> ReachableSetEstimate:
    """Max momentum over flow images of the seed set a(|p|) <= A"""
    density = grid_density or settings.DEFAULT_GRID_DENSITY
    radius = _inverse_growth(a, A)
    charts, q, p = _seeds(model.manifold, radius, density, covariant=True)
    best = _propagated_max(hamiltonian_field(model), model.manifold, model.autonomous, charts, q, p,
                           True, tol, "(H3)")
    estimate = ReachableSetEstimate(A=A, C1=0.0, seed_radius=radius, grid_density=density, time_grid=TIME_GRID,
                                    seeds=len(q), max_norm=best, margin=margin,
                                    R_A=max(margin * best, radius), side="hamiltonian")
    logger.info(f"Reachable set (momenta): A={A:.6g} seed |p| <= {radius:.6g} R_A={estimate.R_A:.6g}")
    return estimate


# ------------------------------------------------------------ certificate
def certify_solution(L: LagrangianModel, L0: LagrangianModel, path: DiscretePath, R: float, R_A: float,
                     A: float = np.inf, action_tol: float = 1e-9) -> Certificate:
    """Check A_L0 <= A, max segment speed <= R_A < R and equality of the actions under L and L0"""
    speeds = path.speeds()
    worst = int(np.argmax(speeds))
    max_speed = float(speeds[worst])
    a_l = action(L, path)
    a_l0 = action(L0, path)
    gap = abs(a_l - a_l0)
    within_reach = max_speed <= R_A < R
    within_action = a_l0 <= A
    ok = within_reach and within_action and gap < action_tol
    if not ok:
        logger.warning(f"Uncertified solution: max speed {max_speed:.6g} (R_A = {R_A:.6g}, R = {R:.6g}), "
                       f"action {a_l0:.6g} (A = {A:.6g}), action gap {gap:.3e}")
    return Certificate(
        status=CertificateStatus.PASS if ok else CertificateStatus.UNCERTIFIED,
        max_speed=max_speed,
        R=R,
        R_A=R_A,
        A=float(A) if np.isfinite(A) else None,
        within_reachable_bound=within_reach,
        within_action_bound=within_action,
        action_L=a_l,
        action_L0=a_l0,
        action_gap=gap,
        witness_segment=None if ok else worst,
    )
