"""
Critical points of the discrete action: descent, sweep-family minimax,
Newton refinement, Morse index and the end-to-end solve pipeline
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import ldl

from app.core.errors import (
    ChartError, ConvergenceError, SpeedCapBreach, StageError, TonelliError, UnstableIndexError
)
from app.schemas.analysis import ModificationReport, ReachableSetEstimate, SampleSpec, TonelliReport
from app.schemas.records import CriticalPointRecord, IndexStatus, MinimaxResult
from app.schemas.scenario import ToleranceSpec
from app.services.dynamics import certify_solution, estimate_R_A
from app.services.families import SweepFamily
from app.services.models import LagrangianModel, check_tonelli
from app.services.modification import LagrangianModification, build_lagrangian_modification
from app.services.pathspace import (
    BoundaryCondition, DiscretePath, action, conormal_residual, gradient, gram_matrix, hessian
)

logger = logging.getLogger(__name__)

ARMIJO = 1e-4
MIN_STEP = 1e-14
NEWTON_COND_MAX = 1e12
CLIMB_STEP = 0.2
CLIMB_MAX_ITER = 2000
CONTINUITY_EVERY = 10
DIVERGED_LEVEL = -1e8
PIPELINE_SAFETY = 1.5


@dataclass
class CriticalPoint:
    """A refined path together with the data the pipeline needs downstream"""
    path: DiscretePath
    family: str
    degree: int
    provenance: str
    iterations: int = 0


def _trial_action(L: LagrangianModel, path: DiscretePath) -> float:
    try:
        return action(L, path)
    except ChartError:
        return np.inf


def _step(path: DiscretePath, bc: BoundaryCondition, delta: np.ndarray) -> DiscretePath:
    return bc.retract(path.displaced(delta))


def _default_opts(opts: Optional[ToleranceSpec]) -> ToleranceSpec:
    return opts if opts is not None else ToleranceSpec()


# ----------------------------------------------------------------- descent
def descend(L: LagrangianModel, bc: BoundaryCondition, path: DiscretePath, tol: float = 1e-3,
            max_iter: int = 50000, speed_cap: Optional[float] = None) -> Tuple[DiscretePath, int]:
    """Riesz-preconditioned gradient descent with Armijo backtracking"""
    path = bc.retract(path)
    value = action(L, path)
    alpha = 1.0
    for it in range(max_iter):
        g = gradient(L, path, bc)
        if g.dual_norm < tol:
            logger.debug(f"descent converged in {it} iterations, action {value:.10g}")
            return path, it
        alpha = min(1.0, 2.0 * alpha)
        slope = g.dual_norm ** 2
        while True:
            trial = _step(path, bc, -alpha * g.riesz)
            trial_value = _trial_action(L, trial)
            if trial_value <= value - ARMIJO * alpha * slope:
                break
            alpha *= 0.5
            if alpha < MIN_STEP:
                raise ConvergenceError(f"descent line search failed at |dA| = {g.dual_norm:.3e}")
        path, value = trial, trial_value
        if speed_cap is not None:
            speed = float(path.speeds().max())
            if speed > speed_cap:
                raise SpeedCapBreach(speed, speed_cap)
        if it % 500 == 0:
            logger.debug(f"descent it={it} action={value:.10g} |dA|={g.dual_norm:.3e} alpha={alpha:.3g}")
    raise ConvergenceError(f"descent did not reach |dA| < {tol:g} in {max_iter} iterations")


def refine_newton(L: LagrangianModel, bc: BoundaryCondition, path: DiscretePath, tol: float = 1e-10,
                  max_iter: int = 50) -> DiscretePath:
    """Damped Newton on the constrained node system, merit 1/2 |dA|^2 in the dual norm"""
    path = bc.retract(path)
    g = gradient(L, path, bc)
    for it in range(max_iter):
        if g.dual_norm < tol:
            logger.debug(f"Newton converged in {it} steps, |dA| = {g.dual_norm:.3e}")
            return path
        H = hessian(L, path, bc)
        if np.linalg.cond(H) > NEWTON_COND_MAX:
            delta = -g.riesz.ravel()
        else:
            delta = g.basis @ np.linalg.solve(H, -g.reduced)
        merit = 0.5 * g.dual_norm ** 2
        alpha = 1.0
        while True:
            trial = _step(path, bc, alpha * delta)
            try:
                trial_g = gradient(L, trial, bc)
                trial_merit = 0.5 * trial_g.dual_norm ** 2
            except ChartError:
                trial_merit = np.inf
            if trial_merit <= (1.0 - ARMIJO * alpha) * merit:
                break
            alpha *= 0.5
            if alpha < 1e-6:
                raise ConvergenceError(f"Newton line search failed at |dA| = {g.dual_norm:.3e}")
        path, g = trial, trial_g
    if g.dual_norm < tol:
        return path
    raise ConvergenceError(f"Newton did not reach |dA| < {tol:g} in {max_iter} steps (|dA| = {g.dual_norm:.3e})")


def make_record(L: LagrangianModel, bc: BoundaryCondition, point: CriticalPoint,
                L0: Optional[LagrangianModel] = None) -> CriticalPointRecord:
    path = point.path
    return CriticalPointRecord(
        family=point.family,
        degree=point.degree,
        provenance=point.provenance,
        action=action(L, path),
        action_modified=action(L0, path) if L0 is not None else None,
        gradient_norm=gradient(L, path, bc).dual_norm,
        conormal_residual=conormal_residual(bc, L, path),
        max_speed=float(path.speeds().max()),
        path=path.to_record(),
    )


def minimize(L: LagrangianModel, bc: BoundaryCondition, seed_path: DiscretePath,
             opts: Optional[ToleranceSpec] = None, family: str = "seed") -> CriticalPointRecord:
    """Descend to |dA| < descent_tol, then Newton to refine_tol"""
    opts = _default_opts(opts)
    path, iterations = descend(L, bc, seed_path, opts.descent_tol, opts.max_iterations)
    path = refine_newton(L, bc, path, opts.refine_tol, opts.newton_max_iter)
    return make_record(L, bc, CriticalPoint(path, family, 0, "minimum", iterations))


def minimize_with_safeguard(L: LagrangianModel, bc: BoundaryCondition, seed_path: DiscretePath, speed_cap: float,
                            opts: Optional[ToleranceSpec] = None,
                            sample_spec: Optional[SampleSpec] = None) -> Tuple[DiscretePath, Optional[LagrangianModel]]:
    """Raw descent under a speed cap; a breach restarts on a modification at the cap"""
    opts = _default_opts(opts)
    try:
        path, _ = descend(L, bc, seed_path, opts.descent_tol, opts.max_iterations, speed_cap=speed_cap)
        return refine_newton(L, bc, path, opts.refine_tol, opts.newton_max_iter), None
    except SpeedCapBreach as exc:
        logger.warning(f"Raw descent breached its cap ({exc}); restarting on a modified Lagrangian")
    report = check_tonelli(L, sample_spec)
    L0 = build_lagrangian_modification(L, speed_cap, report.C(1.0), sample_spec)
    path, _ = descend(L0, bc, seed_path, opts.descent_tol, opts.max_iterations)
    return refine_newton(L0, bc, path, opts.refine_tol, opts.newton_max_iter), L0


# ----------------------------------------------------------------- minimax
def _orthonormal_tangents(path: DiscretePath, tangents: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Gram-Schmidt in the W^{1,2} metric; degenerate directions are dropped"""
    G = gram_matrix(path)
    basis: List[np.ndarray] = []
    for tau in tangents:
        v = np.ravel(tau).astype(float)
        for u in basis:
            v = v - (u @ G @ v) * u
        norm = float(np.sqrt(max(v @ G @ v, 0.0)))
        if norm > 1e-12:
            basis.append(v / norm)
    return basis


def _split(path: DiscretePath, z: np.ndarray, tangents: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """(normal, tangential) parts of z relative to the family tangents"""
    G = gram_matrix(path)
    flat = z.ravel()
    along = np.zeros_like(flat)
    for u in _orthonormal_tangents(path, tangents):
        along += (u @ G @ flat) * u
    return (flat - along).reshape(z.shape), along.reshape(z.shape)


def _deform_round(L0, bc, family: SweepFamily, values: np.ndarray, alpha: float):
    """One common-step descent of every member, normal to the family; Armijo on the family max"""
    directions, slopes = [], []
    for i, member in enumerate(family.members):
        g = gradient(L0, member, bc)
        normal, _ = _split(member, g.riesz, family.tangents(i))
        directions.append(normal)
        slopes.append(w_norm_sq(member, normal))
    current = float(values.max())
    top = int(np.argmax(values))
    alpha = min(1.0, 2.0 * alpha)
    while alpha >= MIN_STEP:
        members = [_step(m, bc, -alpha * d) for m, d in zip(family.members, directions)]
        trial = np.array([_trial_action(L0, m) for m in members])
        if trial.max() <= current - ARMIJO * alpha * slopes[top] + 1e-14 * max(1.0, abs(current)):
            return family.with_members(members), trial, alpha
        alpha *= 0.5
    return family, values, 0.0


def w_norm_sq(path: DiscretePath, xi: np.ndarray) -> float:
    flat = np.ravel(xi)
    return float(flat @ gram_matrix(path) @ flat)


def climb(L0: LagrangianModel, bc: BoundaryCondition, path: DiscretePath, tangents: Sequence[np.ndarray],
          tol: float = 1e-3, step: float = CLIMB_STEP, max_iter: int = CLIMB_MAX_ITER) -> DiscretePath:
    """Ascend along the family tangents and descend normally to them"""
    for it in range(max_iter):
        g = gradient(L0, path, bc)
        if g.dual_norm < tol:
            logger.debug(f"climb converged in {it} iterations")
            return path
        normal, along = _split(path, g.riesz, tangents)
        path = _step(path, bc, -step * (normal - along))
    logger.warning(f"climb stopped after {max_iter} iterations at |dA| = {gradient(L0, path, bc).dual_norm:.3e}")
    return path


def minimax(L0: LagrangianModel, bc: BoundaryCondition, family: SweepFamily,
            opts: Optional[ToleranceSpec] = None) -> Tuple[MinimaxResult, DiscretePath]:
    """Deform the family until its max stalls, then climb and refine the argmax member"""
    opts = _default_opts(opts)
    family = family.with_members([bc.retract(m) for m in family.members])
    values = np.array([action(L0, m) for m in family.members])
    log = [float(values.max())]
    initial_gap = family.continuity()
    continuity_max = initial_gap
    alpha = 1.0
    converged = False
    rounds = 0
    for rounds in range(1, opts.minimax_max_rounds + 1):
        family, values, alpha = _deform_round(L0, bc, family, values, alpha)
        log.append(float(values.max()))
        if log[-1] < DIVERGED_LEVEL:
            logger.error(f"family '{family.name}' max diverges ({log[-1]:.3e})")
            raise ConvergenceError(f"family '{family.name}' max diverges; degree-0 or misconfigured family")
        if rounds % CONTINUITY_EVERY == 0:
            gap = family.continuity()
            if gap > 2.0 * continuity_max:
                logger.warning(f"family '{family.name}' neighbor distance grew to {gap:.4g}")
            continuity_max = max(continuity_max, gap)
        if alpha == 0.0:
            converged = True
            break
        if rounds >= opts.minimax_window and log[-1 - opts.minimax_window] - log[-1] < opts.minimax_stall:
            converged = True
            break
    if not converged:
        logger.warning(f"family '{family.name}' did not stall within {opts.minimax_max_rounds} rounds")
    top = int(np.argmax(values))
    logger.info(f"family '{family.name}' (degree {family.degree}): max {log[-1]:.10g} after {rounds} rounds, "
                f"argmax member {top}")
    path = climb(L0, bc, family.members[top], family.tangents(top), opts.descent_tol)
    path = refine_newton(L0, bc, path, opts.refine_tol, opts.newton_max_iter)
    result = MinimaxResult(
        family=family.name,
        degree=family.degree,
        level=action(L0, path),
        family_max_log=log,
        rounds=rounds,
        argmax_member=top,
        continuity_max=continuity_max,
        converged=converged,
    )
    return result, path


# ------------------------------------------------------------- Morse index
def inertia(H: np.ndarray, kappa: Optional[float] = None) -> Tuple[int, int]:
    """(m, m*) = (#eig < -kappa, #eig <= kappa) by symmetric indefinite factorization"""
    H = 0.5 * (H + H.T)
    if kappa is None:
        kappa = 1e-8 * max(np.linalg.norm(H, ord=np.inf), 1e-300)
    eye = np.eye(H.shape[0])

    def counts(M):
        _, d, _ = ldl(M)
        eig = np.linalg.eigvalsh(d)
        return int(np.sum(eig < 0.0)), int(np.sum(eig > 0.0))

    m, _ = counts(H + kappa * eye)
    _, positive = counts(H - kappa * eye)
    return m, H.shape[0] - positive


def morse_index(L: LagrangianModel, bc: BoundaryCondition, path: DiscretePath, check_refined: bool = True,
                opts: Optional[ToleranceSpec] = None, strict: bool = False) -> Tuple[int, int, IndexStatus]:
    """Morse index and large index, recomputed on the doubled mesh when check_refined"""
    opts = _default_opts(opts)
    m, m_star = inertia(hessian(L, path, bc))
    if m_star - m < 0 or m_star - m > 2 * path.dim:
        logger.warning(f"index gap m* - m = {m_star - m} outside [0, {2 * path.dim}]")
    if not check_refined:
        return m, m_star, IndexStatus.NOT_COMPUTED
    try:
        fine = refine_newton(L, bc, path.refined(), opts.refine_tol, opts.newton_max_iter)
        fine_index = inertia(hessian(L, fine, bc))
    except TonelliError as exc:
        logger.warning(f"index at 2N unavailable: {exc}")
        fine_index = None
    if fine_index != (m, m_star):
        logger.warning(f"Morse index (m, m*) = {(m, m_star)} at N = {path.N} but {fine_index} at N = {2 * path.N}")
        if strict:
            raise UnstableIndexError(f"index {(m, m_star)} changes to {fine_index} under mesh doubling")
        return m, m_star, IndexStatus.UNSTABLE
    return m, m_star, IndexStatus.STABLE


# -------------------------------------------------------------- distinctness
def dedupe(records: Sequence[CriticalPointRecord], manifold, distance_tol: float = 1e-4,
           action_tol: float = 1e-6) -> List[CriticalPointRecord]:
    """Sort by action and keep one representative of each cluster of near-equal paths"""
    kept: List[CriticalPointRecord] = []
    kept_paths: List[DiscretePath] = []
    for record in sorted(records, key=lambda r: (r.action, r.degree, r.family)):
        path = DiscretePath.from_record(record.path, manifold)
        duplicate = any(
            abs(record.action - other.action) <= action_tol and path.c0_distance(other_path) <= distance_tol
            for other, other_path in zip(kept, kept_paths)
        )
        if duplicate:
            logger.debug(f"record from '{record.family}' duplicates an earlier solution")
            continue
        kept.append(record)
        kept_paths.append(path)
    return kept


# ---------------------------------------------------------------- pipeline
@dataclass
class PipelineResult:
    tonelli: TonelliReport
    A: float
    reachable: ReachableSetEstimate
    R: float
    modification: LagrangianModification
    modification_report: ModificationReport
    minimax: List[MinimaxResult]
    records: List[CriticalPointRecord]
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def certified(self) -> List[CriticalPointRecord]:
        return [r for r in self.records if r.certified]

    @property
    def levels_nondecreasing(self) -> Optional[bool]:
        """Minimax levels ordered by degree never decrease"""
        if len(self.minimax) < 2:
            return None
        levels = [r.level for r in sorted(self.minimax, key=lambda r: (r.degree, r.level))]
        return bool(all(b >= a - 1e-9 for a, b in zip(levels, levels[1:])))


class _Stage:
    """Times a pipeline stage and wraps its failures with the stage name"""

    def __init__(self, name: str, timings: Dict[str, float]):
        self.name = name
        self.timings = timings

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = self.timings.get(self.name, 0.0) + time.perf_counter() - self.start
        if exc is not None and not isinstance(exc, StageError):
            logger.error(f"Stage '{self.name}' failed: {exc}")
            raise StageError(self.name, exc) from exc
        return False


def solve_pipeline(L: LagrangianModel, bc: BoundaryCondition, families: Sequence[SweepFamily],
                   opts: Optional[ToleranceSpec] = None, sample_spec: Optional[SampleSpec] = None,
                   grid_density: Optional[int] = None) -> PipelineResult:
    """Tonelli check, a-priori bound, modification, per-family solve, certification, index, dedupe"""
    opts = _default_opts(opts)
    if not families:
        raise StageError("families", ValueError("at least one sweep family is required"))
    timings: Dict[str, float] = {}

    with _Stage("tonelli", timings):
        report = check_tonelli(L, sample_spec)
        C1 = report.C(1.0)

    with _Stage("bounds", timings):
        family_action = max(action(L, m) for f in families for m in f.members)
        family_speed = max(float(m.speeds().max()) for f in families for m in f.members)
        A = family_action + 1.0
        reach = estimate_R_A(L, A, C1, grid_density, opts.flow_tol)
        R = PIPELINE_SAFETY * max(reach.R_A, family_speed)
        logger.info(f"A = {A:.6g}, R_A = {reach.R_A:.6g}, family max speed = {family_speed:.6g}, R = {R:.6g}")

    with _Stage("modification", timings):
        L0 = build_lagrangian_modification(L, R, C1, sample_spec)

    points: List[CriticalPoint] = []
    minimax_results: List[MinimaxResult] = []
    for family in families:
        with _Stage(f"solve:{family.name}", timings):
            if family.degree == 0:
                for member in family.members:
                    path, iterations = descend(L0, bc, member, opts.descent_tol, opts.max_iterations)
                    path = refine_newton(L0, bc, path, opts.refine_tol, opts.newton_max_iter)
                    points.append(CriticalPoint(path, family.name, 0, "minimum", iterations))
            else:
                result, path = minimax(L0, bc, family, opts)
                minimax_results.append(result)
                points.append(CriticalPoint(path, family.name, family.degree, f"minimax level {result.level:.10g}",
                                            result.rounds))

    records: List[CriticalPointRecord] = []
    for point, result in zip(points, _matching_results(points, minimax_results)):
        with _Stage(f"certify:{point.family}", timings):
            record = make_record(L, bc, point, L0)
            record.certificate = certify_solution(L, L0, point.path, R, reach.R_A, A)
        if opts.index_check:
            with _Stage(f"index:{point.family}", timings):
                m, m_star, status = morse_index(L, bc, point.path, True, opts)
                record.morse_index, record.large_morse_index, record.index_status = m, m_star, status
                if point.degree > 0:
                    record.degree_within_indices = m <= point.degree <= m_star
        if result is not None:
            result.record = record
        records.append(record)

    with _Stage("dedupe", timings):
        distinct = dedupe(records, L.manifold, opts.dedupe_distance, opts.dedupe_action)
    certified = sum(r.certified for r in distinct)
    logger.info(f"{len(distinct)} distinct critical points ({certified} certified) from {len(families)} families")
    return PipelineResult(
        tonelli=report,
        A=A,
        reachable=reach,
        R=R,
        modification=L0,
        modification_report=L0.report,
        minimax=minimax_results,
        records=distinct,
        timings=timings,
    )


def _matching_results(points: Sequence[CriticalPoint], results: Sequence[MinimaxResult]):
    """The minimax result belonging to each point, None for minima"""
    by_name = {r.family: r for r in results}
    return [by_name.get(p.family) if p.degree > 0 else None for p in points]
