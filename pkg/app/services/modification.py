"""
Convex quadratic R-modifications of Lagrangians and quadratic
R-modifications of Hamiltonians, with sampled clause verification
"""

import logging
from typing import Callable, List, Optional

import numpy as np

from app.core.errors import ModificationError
from app.schemas.analysis import ClauseResult, ModificationReport, PropertyVerdict, SampleSpec, Verdict
from app.services.models import (
    HamiltonianJet, HamiltonianModel, LagrangianJet, LagrangianModel, FiberSample,
    _broadcast, _metric_many, check_h1_h2, compose_radial, cospeed_jet, fiber_sample,
    generalized_eigvalsh, jet_many, speed_jet
)

logger = logging.getLogger(__name__)

SAFETY_FACTOR = 1.5
ESCALATED_SAFETY_FACTOR = 2.0
EXACT_TOL = 1e-12


def smoothstep(u: np.ndarray):
    """Quintic smoothstep S = 6u^5 - 15u^4 + 10u^3 on [0, 1], clamped; returns (S, S', S'')"""
    u = np.clip(u, 0.0, 1.0)
    return (
        u ** 3 * (10.0 - 15.0 * u + 6.0 * u * u),
        30.0 * u * u * (1.0 - u) ** 2,
        60.0 * u * (1.0 - u) * (1.0 - 2.0 * u),
    )


def phi_cutoff(s: np.ndarray):
    """C2 nondecreasing cutoff: identity on s <= 1, constant 1.5 on s >= 2"""
    s = np.asarray(s, dtype=float)
    u = np.clip(s - 1.0, 0.0, 1.0)
    inner = 1.0 + u - (u ** 6 - 3.0 * u ** 5 + 2.5 * u ** 4)
    value = np.where(s <= 1.0, s, inner)
    d1 = np.where(s <= 1.0, 1.0, 1.0 - (6.0 * u ** 5 - 15.0 * u ** 4 + 10.0 * u ** 3))
    d2 = np.where(s <= 1.0, 0.0, -30.0 * u * u * (1.0 - u) ** 2)
    return value, d1, d2


class PsiProfile:
    """Convex C2 function of s = |v|^2: zero on s <= R^2, mu s - 2 mu R^2 on s >= 4 R^2

    With u = (s - R^2) / (3 R^2), psi'' is the bump 20 mu u (1 - u)^3 / (3 R^2), so psi'
    climbs from 0 to mu on [R^2, 4 R^2].
    """

    def __init__(self, R: float, mu: float):
        self.R = float(R)
        self.mu = float(mu)

    def __call__(self, s: np.ndarray):
        R2, mu = self.R ** 2, self.mu
        s = np.asarray(s, dtype=float)
        u = np.clip((s - R2) / (3.0 * R2), 0.0, 1.0)
        ramp = u ** 3 * (10.0 / 3.0 - 5.0 * u + 3.0 * u * u - 2.0 * u ** 3 / 3.0)
        slope = u * u * (10.0 - 20.0 * u + 15.0 * u * u - 4.0 * u ** 3)
        curve = 20.0 * u * (1.0 - u) ** 3 / (3.0 * R2)
        value = np.where(s >= 4.0 * R2, mu * s - 2.0 * mu * R2, 3.0 * mu * R2 * ramp)
        value = np.where(s <= R2, 0.0, value)
        return value, mu * slope, mu * curve


def _radial(jet, f, f1, f2, scale):
    """Compose a scalar function with a Lagrangian jet: scale * f(value / scale)"""
    out_q = f1[:, None] * jet.d_q
    out_v = f1[:, None] * jet.d_v
    k = f2 / scale
    outer = lambda a, b: a[:, :, None] * b[:, None, :]
    return LagrangianJet(
        value=np.where(jet.value <= scale, jet.value, scale * f),
        d_q=out_q,
        d_v=out_v,
        d_t=f1 * jet.d_t,
        d_qq=f1[:, None, None] * jet.d_qq + k[:, None, None] * outer(jet.d_q, jet.d_q),
        d_qv=f1[:, None, None] * jet.d_qv + k[:, None, None] * outer(jet.d_q, jet.d_v),
        d_vv=f1[:, None, None] * jet.d_vv + k[:, None, None] * outer(jet.d_v, jet.d_v),
        d_tv=f1[:, None] * jet.d_tv + (k * jet.d_t)[:, None] * jet.d_v,
    )


class LagrangianModification(LagrangianModel):
    """L0 = lambda phi(L / lambda) + psi(|v|^2)"""

    derivative_mode = "analytic"

    def __init__(self, base: LagrangianModel, R: float, lam: float, mu: float, C1: float,
                 psi: Optional[Callable] = None, safety_factor: float = SAFETY_FACTOR):
        super().__init__(base.manifold)
        self.base = base
        self.R = float(R)
        self.lam = float(lam)
        self.mu = float(mu)
        self.C1 = float(C1)
        self.psi = psi or PsiProfile(R, mu)
        self.safety_factor = safety_factor
        self.time_periodic = base.time_periodic
        self.autonomous = base.autonomous

    def truncated_jet(self, t, chart, q, v) -> LagrangianJet:
        """Jet of L1 = lambda phi(L / lambda)"""
        base = self.base.jet(t, chart, q, v)
        return _radial(base, *phi_cutoff(base.value / self.lam), self.lam)

    def evaluate(self, t, chart, q, v):
        t, q, v = _broadcast(t, q, v)
        value = self.base.evaluate(t, chart, q, v)
        s = np.einsum("mi,mij,mj->m", v, self.manifold.metric(chart, q), v)
        truncated = np.where(value <= self.lam, value, self.lam * phi_cutoff(value / self.lam)[0])
        return truncated + self.psi(s)[0]

    def jet(self, t, chart, q, v):
        t, q, v = _broadcast(t, q, v)
        out = self.truncated_jet(t, chart, q, v)
        rj = speed_jet(self.manifold, chart, q, v)
        value, d_q, d_v, d_qq, d_qv, d_vv = compose_radial(*self.psi(rj.s), rj)
        out.value = out.value + value
        out.d_q = out.d_q + d_q
        out.d_v = out.d_v + d_v
        out.d_qq = out.d_qq + d_qq
        out.d_qv = out.d_qv + d_qv
        out.d_vv = out.d_vv + d_vv
        return out


def _shell_sample(manifold, v_max: float, n_radii: int = 41, base: Optional[SampleSpec] = None,
                  covariant: bool = False) -> FiberSample:
    spec = (base or SampleSpec()).model_copy(update={"v_max": float(v_max), "n_radii": n_radii})
    return fiber_sample(manifold, spec, covariant=covariant)


def _modification_constants(L: LagrangianModel, R: float, C1: float, factor: float, spec: Optional[SampleSpec]):
    manifold = L.manifold
    inner = _shell_sample(manifold, 2.0 * R, base=spec)
    peak = float(jet_many(L, inner.t, inner.charts, inner.q, inner.x).value.max())
    lam = factor * peak if peak > 0 else 1.0

    untilted = LagrangianModification(L, R, lam, 0.0, C1)
    wide = _shell_sample(manifold, 4.0 * R, base=spec)
    curv = -np.inf
    min_l1 = np.inf
    for cid in np.unique(wide.charts):
        mask = wide.charts == cid
        l1_jet = untilted.truncated_jet(wide.t[mask], cid, wide.q[mask], wide.x[mask])
        g = manifold.metric(cid, wide.q[mask])
        curv = max(curv, float(generalized_eigvalsh(-l1_jet.d_vv, g)[:, -1].max()))
    far = _shell_sample(manifold, 8.0 * R, base=spec)
    for cid in np.unique(far.charts):
        mask = far.charts == cid
        min_l1 = min(min_l1, float(untilted.truncated_jet(far.t[mask], cid, far.q[mask], far.x[mask]).value.min()))
    mu = factor * max(curv, 1.0 / (4.0 * R), (2.0 * R - C1 - min_l1) / (2.0 * R * R))
    return lam, mu


def build_lagrangian_modification(L: LagrangianModel, R: float, C1: float,
                                  sample_spec: Optional[SampleSpec] = None) -> LagrangianModification:
    """Construct L0 and verify Definition clauses, escalating the safety factor once"""
    if not R > 0:
        raise ModificationError(f"modification radius must be positive, got R = {R}")
    for factor in (SAFETY_FACTOR, ESCALATED_SAFETY_FACTOR):
        lam, mu = _modification_constants(L, R, C1, factor, sample_spec)
        mod = LagrangianModification(L, R, lam, mu, C1, safety_factor=factor)
        report = verify_modification(mod, sample_spec)
        if report.passed:
            logger.info(f"Lagrangian modification R={R:g}: lambda={lam:.6g} mu={mu:.6g} (factor {factor})")
            mod.report = report
            return mod
        failed = [c.clause for c in report.clauses if c.verdict != Verdict.PASS]
        logger.warning(f"Modification clauses {failed} failed with safety factor {factor}")
    logger.error(f"Lagrangian modification at R={R:g} failed after escalation")
    raise ModificationError(f"modification at R={R:g} fails clauses {failed} after escalation")


# ------------------------------------------------------------ hamiltonian
def _product(f, g):
    """Jet tuple (value, d_q, d_p, d_qq, d_qp, d_pp) of a product"""
    outer = lambda a, b: a[:, :, None] * b[:, None, :]
    f0, fq, fp, fqq, fqp, fpp = f
    g0, gq, gp, gqq, gqp, gpp = g
    w = lambda a: a[:, None]
    ww = lambda a: a[:, None, None]
    return (
        f0 * g0,
        w(f0) * gq + w(g0) * fq,
        w(f0) * gp + w(g0) * fp,
        ww(f0) * gqq + ww(g0) * fqq + outer(fq, gq) + outer(gq, fq),
        ww(f0) * gqp + ww(g0) * fqp + outer(fq, gp) + outer(gq, fp),
        ww(f0) * gpp + ww(g0) * fpp + outer(fp, gp) + outer(gp, fp),
    )


class HamiltonianModification(HamiltonianModel):
    """H0 = phi(|p|) H + (1 - phi(|p|)) C |p|^2"""

    derivative_mode = "analytic"

    def __init__(self, base: HamiltonianModel, R: float, C: float,
                 a: Callable, h: Callable, safety_factor: float = SAFETY_FACTOR):
        super().__init__(base.manifold)
        self.base = base
        self.R = float(R)
        self.C = float(C)
        self.a = a
        self.h = h
        self.safety_factor = safety_factor
        self.time_periodic = base.time_periodic
        self.autonomous = base.autonomous

    def cutoff(self, r: np.ndarray):
        """phi(r) = 1 - S(r - R) with derivatives in r"""
        s, s1, s2 = smoothstep(r - self.R)
        return 1.0 - s, -s1, -s2

    def _cutoff_in_sigma(self, sigma):
        r = np.sqrt(np.maximum(sigma, 0.0))
        f, f1, f2 = self.cutoff(r)
        active = r > self.R
        safe = np.where(active, r, 1.0)
        g1 = np.where(active, f1 / (2.0 * safe), 0.0)
        g2 = np.where(active, f2 / (4.0 * safe * safe) - f1 / (4.0 * safe ** 3), 0.0)
        return f, g1, g2

    def evaluate(self, t, chart, q, p):
        t, q, p = _broadcast(t, q, p)
        sigma = np.einsum("mi,mij,mj->m", p, self.manifold.inverse_metric(chart, q), p)
        f = self.cutoff(np.sqrt(sigma))[0]
        return f * self.base.evaluate(t, chart, q, p) + (1.0 - f) * self.C * sigma

    def jet(self, t, chart, q, p):
        t, q, p = _broadcast(t, q, p)
        base = self.base.jet(t, chart, q, p)
        rj = cospeed_jet(self.manifold, chart, q, p)
        cut = compose_radial(*self._cutoff_in_sigma(rj.s), rj)
        quad = compose_radial(self.C * rj.s, np.full_like(rj.s, self.C), np.zeros_like(rj.s), rj)
        h_tuple = (base.value, base.d_q, base.d_p, base.d_qq, base.d_qp, base.d_pp)
        first = _product(cut, h_tuple)
        second = _product(cut, quad)
        parts = [a + b - c for a, b, c in zip(first, quad, second)]
        return HamiltonianJet(
            value=parts[0], d_q=parts[1], d_p=parts[2], d_t=cut[0] * base.d_t,
            d_qq=parts[3], d_qp=parts[4], d_pp=parts[5],
        )

    def first_derivatives(self, t, chart, q, p):
        j = self.jet(t, chart, q, p)
        return j.value, j.d_q, j.d_p, j.d_t


def build_hamiltonian_modification(H: HamiltonianModel, R: float,
                                   a: Optional[Callable] = None, h: Optional[Callable] = None,
                                   sample_spec: Optional[SampleSpec] = None) -> HamiltonianModification:
    """Construct H0; a and h default to the fitted (H1)(H2) lower bounds"""
    if not R > 0:
        raise ModificationError(f"modification radius must be positive, got R = {R}")
    if a is None or h is None:
        growth = check_h1_h2(H, sample_spec=sample_spec)
        if growth.h1_verdict != Verdict.PASS or growth.h2_verdict != Verdict.PASS:
            raise ModificationError("Hamiltonian fails the sampled (H1)/(H2) checks")
        # slack covers the gap between the fitting grid and the verification grid
        c0 = growth.c0 + 0.05 * (1.0 + abs(growth.c0))
        c1 = growth.c1 + 0.05 * (1.0 + abs(growth.c1))
        a = a or (lambda s: s - c0)
        h = h or (lambda s: s * np.log1p(s) - c1)

    radii = np.linspace(R, max(10.0, 4.0 * (R + 1.0)), 200)
    if np.any(radii ** 2 < a(radii)):
        raise ModificationError(f"R = {R:g} too small: |p|^2 < a(|p|) beyond R")

    band = _shell_sample(H.manifold, R + 1.0, n_radii=41, base=sample_spec, covariant=True)
    in_band = band.norm >= R
    ratio = -np.inf
    for cid in np.unique(band.charts[in_band]):
        mask = in_band & (band.charts == cid)
        values = H.evaluate(band.t[mask], cid, band.q[mask], band.x[mask])
        ratio = max(ratio, float((values / band.norm[mask] ** 2).max()))

    failed: List[str] = []
    for factor in (SAFETY_FACTOR, ESCALATED_SAFETY_FACTOR):
        C = factor * max(1.0, ratio)
        mod = HamiltonianModification(H, R, C, a, h, safety_factor=factor)
        report = verify_modification(mod, sample_spec)
        if report.passed:
            logger.info(f"Hamiltonian modification R={R:g}: C={C:.6g} (factor {factor})")
            mod.report = report
            return mod
        failed = [c.clause for c in report.clauses if c.verdict != Verdict.PASS]
        logger.warning(f"Hamiltonian modification clauses {failed} failed with safety factor {factor}")
    raise ModificationError(f"Hamiltonian modification at R={R:g} fails clauses {failed} after escalation")


# ----------------------------------------------------------- verification
def _clause(name, ok, margin, sample, idx, detail=""):
    witness = None
    if idx is not None:
        witness = {"t": float(sample.t[idx]), "norm": float(sample.norm[idx])}
        witness.update({f"q{i}": float(c) for i, c in enumerate(sample.q[idx])})
    return ClauseResult(clause=name, verdict=Verdict.PASS if ok else Verdict.FAIL,
                        margin=float(margin), witness=witness, detail=detail)


def _verify_lagrangian(mod: LagrangianModification, spec: Optional[SampleSpec]) -> ModificationReport:
    manifold = mod.manifold
    S = _shell_sample(manifold, 8.0 * mod.R, n_radii=81, base=spec)
    j0 = jet_many(mod, S.t, S.charts, S.q, S.x)
    base = jet_many(mod.base, S.t, S.charts, S.q, S.x)
    g = _metric_many(manifold, S.charts, S.q)
    clauses = []

    inside = S.norm <= mod.R
    diff = np.where(inside, np.abs(j0.value - base.value), 0.0)
    idx = int(np.argmax(diff))
    clauses.append(_clause("a", diff[idx] <= EXACT_TOL * (1.0 + abs(base.value[idx])), -diff[idx], S, idx,
                           "L0 = L on |v| <= R"))

    eig = generalized_eigvalsh(j0.d_vv, g)[:, 0]
    idx = int(np.argmin(eig))
    norms = (
        np.linalg.norm(j0.d_vv, axis=(1, 2)),
        np.linalg.norm(j0.d_qv, axis=(1, 2)) / (1.0 + S.norm),
        np.linalg.norm(j0.d_qq, axis=(1, 2)) / (1.0 + S.norm ** 2),
    )
    ell1 = float(max(n.max() for n in norms))
    bounded = all(np.all(np.isfinite(n)) for n in norms)
    # a base that is only weakly convex on the zero section (|v|^4 / 4) keeps ell0 = 0 there
    moving = S.norm > 0
    convex = eig[moving].min() > 0 and eig[~moving].min(initial=np.inf) >= -EXACT_TOL
    clauses.append(_clause("b", convex and bounded, eig[idx], S, idx,
                           f"ell0 = {eig[idx]:.6g}, ell1 = {ell1:.6g}"))

    gap = j0.value - (S.norm - mod.C1)
    idx = int(np.argmin(gap))
    clauses.append(_clause("c", gap[idx] >= -1e-9, gap[idx], S, idx, "L0 >= |v| - C(1)"))

    if mod.base.time_periodic:
        shifted = jet_many(mod, S.t + 1.0, S.charts, S.q, S.x).value
        drift = np.abs(shifted - j0.value)
        idx = int(np.argmax(drift))
        clauses.append(_clause("periodic", drift[idx] <= 1e-9 * (1.0 + abs(j0.value[idx])), -drift[idx], S, idx,
                               "L0(t + 1) = L0(t)"))
    return ModificationReport(
        kind="lagrangian", R=mod.R, safety_factor=mod.safety_factor,
        constants={"lambda": mod.lam, "mu": mod.mu, "C1": mod.C1, "ell0": float(eig.min()), "ell1": ell1},
        clauses=clauses,
    )


def _verify_hamiltonian(mod: HamiltonianModification, spec: Optional[SampleSpec]) -> ModificationReport:
    manifold = mod.manifold
    S = _shell_sample(manifold, max(10.0, 4.0 * (mod.R + 1.0)), n_radii=81, base=spec, covariant=True)
    value = np.empty(len(S.t))
    d_q = np.empty_like(S.x)
    d_p = np.empty_like(S.x)
    base_value = np.empty(len(S.t))
    base_dp = np.empty_like(S.x)
    for cid in np.unique(S.charts):
        mask = S.charts == cid
        v0, q0, p0, _ = mod.first_derivatives(S.t[mask], cid, S.q[mask], S.x[mask])
        vb, _, pb, _ = mod.base.first_derivatives(S.t[mask], cid, S.q[mask], S.x[mask])
        value[mask], d_q[mask], d_p[mask] = v0, q0, p0
        base_value[mask], base_dp[mask] = vb, pb
    r = S.norm
    integrand = np.einsum("mi,mi->m", S.x, d_p) - value
    clauses = []

    diff = np.where(r <= mod.R, np.abs(value - base_value), 0.0)
    idx = int(np.argmax(diff))
    clauses.append(_clause("a", diff[idx] <= EXACT_TOL * (1.0 + abs(base_value[idx])), -diff[idx], S, idx,
                           "H0 = H on |p| <= R"))

    far = r >= mod.R + 1.0
    h0 = 0.5 * float((integrand[far] / r[far] ** 2).min()) if np.any(far) else 0.0
    h1 = max(0.0, float((h0 * r ** 2 - integrand).max()))
    # (H2') bounds are fitted as h2; only finiteness is testable on samples
    h2 = float(max((np.linalg.norm(d_q, axis=1) / (1.0 + r ** 2)).max(),
                   (np.linalg.norm(d_p, axis=1) / (1.0 + r)).max()))
    idx = int(np.argmin(np.where(far, integrand / np.maximum(r, 1e-300) ** 2, np.inf)))
    clauses.append(_clause("b", h0 > 0 and np.isfinite(h2), h0, S, idx,
                           f"h0 = {h0:.6g}, h1 = {h1:.6g}, h2 = {h2:.6g}"))

    gap = integrand - mod.a(r)
    idx = int(np.argmin(gap))
    clauses.append(_clause("c", gap[idx] >= -1e-9, gap[idx], S, idx, "DH0[Y] - H0 >= a(|p|)"))

    gap = value - mod.h(r)
    idx = int(np.argmin(gap))
    clauses.append(_clause("d", gap[idx] >= -1e-9, gap[idx], S, idx, "H0 >= h(|p|)"))

    phi, dphi, _ = mod.cutoff(r)
    base_integrand = np.einsum("mi,mi->m", S.x, base_dp) - base_value
    predicted = (phi * base_integrand + (1.0 - phi) * mod.C * r ** 2
                 - r * dphi * (mod.C * r ** 2 - base_value))
    resid = np.abs(predicted - integrand) / (1.0 + np.abs(integrand))
    idx = int(np.argmax(resid))
    clauses.append(_clause("identity", resid[idx] <= 1e-8, -resid[idx], S, idx,
                           "action integrand of H0 matches the cutoff expansion"))
    return ModificationReport(
        kind="hamiltonian", R=mod.R, safety_factor=mod.safety_factor,
        constants={"C": mod.C, "h0": h0, "h1": h1, "h2": h2},
        clauses=clauses,
    )


def verify_modification(mod, sample_spec: Optional[SampleSpec] = None) -> ModificationReport:
    """Per-clause sampled verification with worst-case margins and witnesses"""
    if isinstance(mod, LagrangianModification):
        return _verify_lagrangian(mod, sample_spec)
    if isinstance(mod, HamiltonianModification):
        return _verify_hamiltonian(mod, sample_spec)
    raise ModificationError(f"not a modification: {type(mod).__name__}")


# -------------------------------------------------------------- properties
def modification_properties(mod: LagrangianModification, sample_spec: Optional[SampleSpec] = None) -> List[PropertyVerdict]:
    """Joint smoothness of psi, Hessian domination and lower bounds, growth constant ell2"""
    out: List[PropertyVerdict] = []
    R2 = mod.R ** 2
    jump = 0.0
    for joint in (R2, 4.0 * R2):
        eps = 1e-9 * joint
        left = np.array(mod.psi(np.array([joint - eps])))
        right = np.array(mod.psi(np.array([joint + eps])))
        jump = max(jump, float(np.max(np.abs(left - right) / (1.0 + np.abs(left)))))
    out.append(PropertyVerdict(name="psi_joint_smoothness", verdict=Verdict.PASS if jump <= 1e-8 else Verdict.FAIL,
                               value=jump))

    grid = np.linspace(0.0, 6.0 * R2, 1000)
    _, d1, d2 = mod.psi(grid)
    worst = float(min(d1.min(), d2.min()))
    out.append(PropertyVerdict(name="psi_monotone_convex", verdict=Verdict.PASS if worst >= 0 else Verdict.FAIL,
                               value=worst))

    S = _shell_sample(mod.manifold, 8.0 * mod.R, n_radii=81, base=sample_spec)
    j0 = jet_many(mod, S.t, S.charts, S.q, S.x)
    jb = jet_many(mod.base, S.t, S.charts, S.q, S.x)
    g = _metric_many(mod.manifold, S.charts, S.q)
    near = S.norm <= 2.0 * mod.R
    dom = float(generalized_eigvalsh((j0.d_vv - jb.d_vv)[near], g[near])[:, 0].min())
    out.append(PropertyVerdict(name="hessian_dominates_base", verdict=Verdict.PASS if dom >= -1e-9 else Verdict.FAIL,
                               value=dom, detail="|v| <= 2R"))
    lower = float(generalized_eigvalsh(j0.d_vv[~near], g[~near])[:, 0].min() - mod.mu)
    out.append(PropertyVerdict(name="hessian_above_mu", verdict=Verdict.PASS if lower >= -1e-9 else Verdict.FAIL,
                               value=lower, detail="|v| >= 2R"))
    above = float((j0.value - jb.value)[near].min())
    out.append(PropertyVerdict(name="dominates_base_value", verdict=Verdict.PASS if above >= -1e-12 else Verdict.FAIL,
                               value=above))
    ell2 = float(max((np.linalg.norm(j0.d_v, axis=1) / (1.0 + S.norm)).max(),
                     (np.linalg.norm(j0.d_q, axis=1) / (1.0 + S.norm ** 2)).max()))
    out.append(PropertyVerdict(name="growth_ell2", verdict=Verdict.PASS if np.isfinite(ell2) else Verdict.FAIL,
                               value=ell2))
    return out
