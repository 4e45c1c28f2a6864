"""
Lagrangian and Hamiltonian models, Tonelli checks and the Legendre transform
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, fields
from typing import Callable, Optional, Tuple

import numpy as np

from app.core.errors import LegendreError, ModelConfigError, TonelliConditionError
from app.schemas.analysis import (
    CompletenessVerdict, GrowthVerdict, SampleSpec, TonelliReport, Verdict
)
from app.services.expressions import build_env, check_variables, parse_expression
from app.services.geometry import ChartPoint, FlatTorus, ManifoldModel, TangentVector

logger = logging.getLogger(__name__)

FD_STEP_FIRST = 1e-6
FD_STEP_SECOND = 1e-4
LEGENDRE_TOL = 1e-10
LEGENDRE_MAX_ITER = 50


# --------------------------------------------------------------------- jets
@dataclass
class LagrangianJet:
    """Value and derivatives of L on a batch; d_qv[k, j] = d2L / dq_k dv_j"""
    value: np.ndarray
    d_q: np.ndarray
    d_v: np.ndarray
    d_t: np.ndarray
    d_qq: np.ndarray
    d_qv: np.ndarray
    d_vv: np.ndarray
    d_tv: np.ndarray

    def scaled(self, c: float) -> "LagrangianJet":
        return LagrangianJet(*(c * getattr(self, f.name) for f in fields(self)))


@dataclass
class HamiltonianJet:
    """Value and derivatives of H on a batch; d_qp[k, j] = d2H / dq_k dp_j"""
    value: np.ndarray
    d_q: np.ndarray
    d_p: np.ndarray
    d_t: np.ndarray
    d_qq: np.ndarray
    d_qp: np.ndarray
    d_pp: np.ndarray


def _broadcast(t, q, x) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    q = np.atleast_2d(np.asarray(q, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m = max(q.shape[0], x.shape[0])
    q = np.broadcast_to(q, (m, q.shape[1])).copy()
    x = np.broadcast_to(x, (m, x.shape[1])).copy()
    t = np.broadcast_to(np.asarray(t, dtype=float), (m,)).copy()
    return t, q, x


def _shift(t, q, x, kind: str, idx: int, h):
    if kind == "t":
        return t + h, q, x
    if kind == "q":
        q = q.copy()
        q[:, idx] += h
        return t, q, x
    x = x.copy()
    x[:, idx] += h
    return t, q, x


def _fd_first(f, t, q, x, kind, idx, h):
    return (f(*_shift(t, q, x, kind, idx, h)) - f(*_shift(t, q, x, kind, idx, -h))) / (2.0 * h)


def _fd_mixed(f, t, q, x, k1, i, h1, k2, j, h2):
    pp = f(*_shift(*_shift(t, q, x, k1, i, h1), k2, j, h2))
    pm = f(*_shift(*_shift(t, q, x, k1, i, h1), k2, j, -h2))
    mp = f(*_shift(*_shift(t, q, x, k1, i, -h1), k2, j, h2))
    mm = f(*_shift(*_shift(t, q, x, k1, i, -h1), k2, j, -h2))
    return (pp - pm - mp + mm) / (4.0 * h1 * h2)


def finite_difference_jet(f: Callable, t, q, x):
    """Central differences of f(t, q, x) up to second order

    Returns (value, d_q, d_x, d_t, d_qq, d_qx, d_xx, d_tx).
    """
    m, n = q.shape
    hx1 = FD_STEP_FIRST * (1.0 + np.linalg.norm(x, axis=-1))
    hq1 = FD_STEP_FIRST * (1.0 + np.linalg.norm(q, axis=-1))
    hx2 = FD_STEP_SECOND * (1.0 + np.linalg.norm(x, axis=-1))
    hq2 = FD_STEP_SECOND * (1.0 + np.linalg.norm(q, axis=-1))
    value = f(t, q, x)
    d_q = np.empty((m, n))
    d_x = np.empty((m, n))
    d_tx = np.empty((m, n))
    d_qq = np.empty((m, n, n))
    d_qx = np.empty((m, n, n))
    d_xx = np.empty((m, n, n))
    d_t = _fd_first(f, t, q, x, "t", 0, FD_STEP_FIRST)
    for i in range(n):
        d_q[:, i] = _fd_first(f, t, q, x, "q", i, hq1)
        d_x[:, i] = _fd_first(f, t, q, x, "x", i, hx1)
        d_tx[:, i] = _fd_mixed(f, t, q, x, "t", 0, FD_STEP_SECOND, "x", i, hx2)
        for j in range(n):
            d_qx[:, i, j] = _fd_mixed(f, t, q, x, "q", i, hq2, "x", j, hx2)
            if j >= i:
                d_qq[:, i, j] = d_qq[:, j, i] = _fd_mixed(f, t, q, x, "q", i, hq2, "q", j, hq2)
                d_xx[:, i, j] = d_xx[:, j, i] = _fd_mixed(f, t, q, x, "x", i, hx2, "x", j, hx2)
    return value, d_q, d_x, d_t, d_qq, d_qx, d_xx, d_tx


# -------------------------------------------------------------- fiber norms
@dataclass
class RadialJet:
    """Derivatives of a squared fiber norm s with respect to (q, fiber)"""
    s: np.ndarray
    d_q: np.ndarray
    d_x: np.ndarray
    d_qq: np.ndarray
    d_qx: np.ndarray
    d_xx: np.ndarray
    lowered: np.ndarray


def speed_jet(manifold: ManifoldModel, chart: str, q, v) -> RadialJet:
    """s = v^T g(q) v and its derivatives"""
    g = manifold.metric(chart, q)
    dg = manifold.metric_derivative(chart, q)
    ddg = manifold.metric_second_derivative(chart, q)
    gv = np.einsum("mij,mj->mi", g, v)
    return RadialJet(
        s=np.einsum("mi,mi->m", v, gv),
        d_q=np.einsum("mi,mkij,mj->mk", v, dg, v),
        d_x=2.0 * gv,
        d_qq=np.einsum("mi,mklij,mj->mkl", v, ddg, v),
        d_qx=2.0 * np.einsum("mkij,mj->mki", dg, v),
        d_xx=2.0 * g,
        lowered=gv,
    )


def cospeed_jet(manifold: ManifoldModel, chart: str, q, p) -> RadialJet:
    """sigma = p^T g(q)^-1 p and its derivatives"""
    ginv = manifold.inverse_metric(chart, q)
    dg = manifold.metric_derivative(chart, q)
    ddg = manifold.metric_second_derivative(chart, q)
    w = np.einsum("mij,mj->mi", ginv, p)
    dgw = np.einsum("mkij,mj->mki", dg, w)
    return RadialJet(
        s=np.einsum("mi,mi->m", p, w),
        d_q=-np.einsum("mi,mki->mk", w, dgw),
        d_x=2.0 * w,
        d_qq=-np.einsum("mi,mklij,mj->mkl", w, ddg, w) + 2.0 * np.einsum("mli,mij,mkj->mkl", dgw, ginv, dgw),
        d_qx=-2.0 * np.einsum("mij,mkj->mki", ginv, dgw),
        d_xx=2.0 * ginv,
        lowered=w,
    )


def compose_radial(f0, f1, f2, rj: RadialJet):
    """Value and derivatives of f(s) by the chain rule"""
    outer = lambda a, b: a[:, :, None] * b[:, None, :]
    return (
        f0,
        f1[:, None] * rj.d_q,
        f1[:, None] * rj.d_x,
        f1[:, None, None] * rj.d_qq + f2[:, None, None] * outer(rj.d_q, rj.d_q),
        f1[:, None, None] * rj.d_qx + f2[:, None, None] * outer(rj.d_q, rj.d_x),
        f1[:, None, None] * rj.d_xx + f2[:, None, None] * outer(rj.d_x, rj.d_x),
    )


class KineticProfile:
    """Scalar function K of a squared norm with its first two derivatives"""

    name = "profile"

    def __init__(self, coef: float = 1.0):
        self.coef = float(coef)

    def __call__(self, s: np.ndarray):
        raise NotImplementedError


class QuadraticProfile(KineticProfile):
    name = "quadratic"

    def __call__(self, s):
        c = self.coef
        return 0.5 * c * s, np.full_like(s, 0.5 * c), np.zeros_like(s)


class QuarticProfile(KineticProfile):
    name = "quartic"

    def __call__(self, s):
        c = self.coef
        return 0.25 * c * s * s, 0.5 * c * s, np.full_like(s, 0.5 * c)


class NormProfile(KineticProfile):
    """c |x|; derivatives set to zero at the origin"""
    name = "norm"

    def __call__(self, s):
        c = self.coef
        root = np.sqrt(np.maximum(s, 0.0))
        safe = np.where(root > 0, root, 1.0)
        k1 = np.where(root > 0, 0.5 * c / safe, 0.0)
        k2 = np.where(root > 0, -0.25 * c / safe ** 3, 0.0)
        return c * root, k1, k2


# --------------------------------------------------------------- potentials
class Potential:
    """Time-dependent potential U(t, q) on coordinates"""
    autonomous = True

    def value(self, t, q):
        return np.zeros(q.shape[0])

    def grad(self, t, q):
        return np.zeros_like(q)

    def hess(self, t, q):
        return np.zeros(q.shape + (q.shape[1],))

    def dt(self, t, q):
        return np.zeros(q.shape[0])


class CosinePotential(Potential):
    """U = (epsilon + forcing sin 2 pi t) sum_i cos(2 pi q_i)"""

    def __init__(self, epsilon: float = 0.1, forcing: float = 0.0):
        self.epsilon = float(epsilon)
        self.forcing = float(forcing)
        self.autonomous = self.forcing == 0.0

    def _amp(self, t):
        return self.epsilon + self.forcing * np.sin(2.0 * np.pi * t)

    def value(self, t, q):
        return self._amp(t) * np.sum(np.cos(2.0 * np.pi * q), axis=-1)

    def grad(self, t, q):
        return -2.0 * np.pi * self._amp(t)[:, None] * np.sin(2.0 * np.pi * q)

    def hess(self, t, q):
        diag = -4.0 * np.pi ** 2 * self._amp(t)[:, None] * np.cos(2.0 * np.pi * q)
        return diag[:, :, None] * np.eye(q.shape[1])[None]

    def dt(self, t, q):
        return 2.0 * np.pi * self.forcing * np.cos(2.0 * np.pi * t) * np.sum(np.cos(2.0 * np.pi * q), axis=-1)


# --------------------------------------------------------------- lagrangians
class LagrangianModel(ABC):
    """Time-dependent Lagrangian on TM, evaluated per chart on batches"""

    derivative_mode = "finite-difference"
    time_periodic = True
    autonomous = False

    def __init__(self, manifold: ManifoldModel):
        self.manifold = manifold

    @abstractmethod
    def evaluate(self, t, chart: str, q, v) -> np.ndarray:
        """L(t, q, v) for a batch"""

    def jet(self, t, chart: str, q, v) -> LagrangianJet:
        t, q, v = _broadcast(t, q, v)
        f = lambda tt, qq, vv: self.evaluate(tt, chart, qq, vv)
        return LagrangianJet(*finite_difference_jet(f, t, q, v))

    def d_v(self, t, chart, q, v):
        return self.jet(t, chart, q, v).d_v

    def d_q(self, t, chart, q, v):
        return self.jet(t, chart, q, v).d_q

    def d_t(self, t, chart, q, v):
        return self.jet(t, chart, q, v).d_t

    def d_vv(self, t, chart, q, v):
        return self.jet(t, chart, q, v).d_vv

    def d_qv(self, t, chart, q, v):
        return self.jet(t, chart, q, v).d_qv

    def d_qq(self, t, chart, q, v):
        return self.jet(t, chart, q, v).d_qq

    def energy(self, t, chart, q, v):
        """E = D_vL[v] - L"""
        j = self.jet(t, chart, q, v)
        return np.einsum("mi,mi->m", j.d_v, np.atleast_2d(v)) - j.value


class KineticPotentialLagrangian(LagrangianModel):
    """L = K(|v|^2) - U(t, q) with analytic derivatives"""

    derivative_mode = "analytic"

    def __init__(self, manifold: ManifoldModel, profile: KineticProfile, potential: Optional[Potential] = None):
        super().__init__(manifold)
        self.profile = profile
        self.potential = potential or Potential()
        self.autonomous = self.potential.autonomous

    def evaluate(self, t, chart, q, v):
        t, q, v = _broadcast(t, q, v)
        g = self.manifold.metric(chart, q)
        s = np.einsum("mi,mij,mj->m", v, g, v)
        return self.profile(s)[0] - self.potential.value(t, q)

    def jet(self, t, chart, q, v):
        t, q, v = _broadcast(t, q, v)
        rj = speed_jet(self.manifold, chart, q, v)
        value, d_q, d_v, d_qq, d_qv, d_vv = compose_radial(*self.profile(rj.s), rj)
        return LagrangianJet(
            value=value - self.potential.value(t, q),
            d_q=d_q - self.potential.grad(t, q),
            d_v=d_v,
            d_t=-self.potential.dt(t, q),
            d_qq=d_qq - self.potential.hess(t, q),
            d_qv=d_qv,
            d_vv=d_vv,
            d_tv=np.zeros_like(v),
        )


class ScaledLagrangian(LagrangianModel):
    """c L for a positive constant c"""

    def __init__(self, base: LagrangianModel, c: float):
        if c <= 0:
            raise ModelConfigError("scale must be positive")
        super().__init__(base.manifold)
        self.base = base
        self.c = float(c)
        self.derivative_mode = base.derivative_mode
        self.time_periodic = base.time_periodic
        self.autonomous = base.autonomous

    def evaluate(self, t, chart, q, v):
        return self.c * self.base.evaluate(t, chart, q, v)

    def jet(self, t, chart, q, v):
        return self.base.jet(t, chart, q, v).scaled(self.c)


class FiniteDifferenceLagrangian(LagrangianModel):
    """Wraps a model so that only its values are used"""

    def __init__(self, base: LagrangianModel):
        super().__init__(base.manifold)
        self.base = base
        self.time_periodic = base.time_periodic
        self.autonomous = base.autonomous

    def evaluate(self, t, chart, q, v):
        return self.base.evaluate(t, chart, q, v)


class ExpressionLagrangian(LagrangianModel):
    """Lagrangian given by an expression tree in t, q_i, v_i"""

    def __init__(self, manifold: ManifoldModel, tree):
        if len(manifold.charts) != 1:
            raise ModelConfigError("expression models need a single-chart manifold")
        super().__init__(manifold)
        self.expression = parse_expression(tree)
        check_variables(self.expression, manifold.dim, "v")
        self.autonomous = "t" not in self.expression.variables()

    def evaluate(self, t, chart, q, v):
        t, q, v = _broadcast(t, q, v)
        out = self.expression.evaluate(build_env(t, q, v, "v"))
        return np.broadcast_to(out, t.shape).astype(float)


def jet_many(model, t, charts, q, x):
    """Evaluate a model jet on points spread over several charts"""
    t, q, x = _broadcast(t, q, x)
    charts = np.asarray(charts, dtype=object) if not isinstance(charts, str) else np.full(q.shape[0], charts, dtype=object)
    uniq = np.unique(charts)
    if len(uniq) == 1:
        return model.jet(t, uniq[0], q, x)
    parts = {cid: model.jet(t[charts == cid], cid, q[charts == cid], x[charts == cid]) for cid in uniq}
    first = next(iter(parts.values()))
    out = {}
    for f in fields(first):
        sample = getattr(first, f.name)
        arr = np.empty((q.shape[0],) + sample.shape[1:])
        for cid, part in parts.items():
            arr[charts == cid] = getattr(part, f.name)
        out[f.name] = arr
    return type(first)(**out)


# --------------------------------------------------------------- hamiltonians
class HamiltonianModel(ABC):
    """Time-dependent Hamiltonian on T*M, evaluated per chart on batches"""

    derivative_mode = "finite-difference"
    time_periodic = True
    autonomous = False

    def __init__(self, manifold: ManifoldModel):
        self.manifold = manifold

    @abstractmethod
    def evaluate(self, t, chart: str, q, p) -> np.ndarray:
        """H(t, q, p) for a batch"""

    def jet(self, t, chart, q, p) -> HamiltonianJet:
        t, q, p = _broadcast(t, q, p)
        f = lambda tt, qq, pp: self.evaluate(tt, chart, qq, pp)
        value, d_q, d_p, d_t, d_qq, d_qp, d_pp, _ = finite_difference_jet(f, t, q, p)
        return HamiltonianJet(value, d_q, d_p, d_t, d_qq, d_qp, d_pp)

    def first_derivatives(self, t, chart, q, p):
        """(value, d_q, d_p, d_t) without second derivatives"""
        t, q, p = _broadcast(t, q, p)
        f = lambda tt, qq, pp: self.evaluate(tt, chart, qq, pp)
        n = q.shape[1]
        hp = FD_STEP_FIRST * (1.0 + np.linalg.norm(p, axis=-1))
        hq = FD_STEP_FIRST * (1.0 + np.linalg.norm(q, axis=-1))
        d_q = np.column_stack([_fd_first(f, t, q, p, "q", i, hq) for i in range(n)])
        d_p = np.column_stack([_fd_first(f, t, q, p, "x", i, hp) for i in range(n)])
        return f(t, q, p), d_q, d_p, _fd_first(f, t, q, p, "t", 0, FD_STEP_FIRST)

    def d_p(self, t, chart, q, p):
        return self.first_derivatives(t, chart, q, p)[2]

    def d_q(self, t, chart, q, p):
        return self.first_derivatives(t, chart, q, p)[1]

    def d_t(self, t, chart, q, p):
        return self.first_derivatives(t, chart, q, p)[3]

    def liouville_pairing(self, t, chart, q, p):
        """DH[Y] = p . dH/dp"""
        p = np.atleast_2d(p)
        return np.einsum("mi,mi->m", p, self.d_p(t, chart, q, p))

    def hamiltonian_vector_field(self, t, chart, q, p):
        _, d_q, d_p, _ = self.first_derivatives(t, chart, q, p)
        return d_p, -d_q


class KineticPotentialHamiltonian(HamiltonianModel):
    """H = K(|p|^2) + U(t, q) with analytic derivatives"""

    derivative_mode = "analytic"

    def __init__(self, manifold: ManifoldModel, profile: KineticProfile, potential: Optional[Potential] = None):
        super().__init__(manifold)
        self.profile = profile
        self.potential = potential or Potential()
        self.autonomous = self.potential.autonomous

    def evaluate(self, t, chart, q, p):
        t, q, p = _broadcast(t, q, p)
        ginv = self.manifold.inverse_metric(chart, q)
        s = np.einsum("mi,mij,mj->m", p, ginv, p)
        return self.profile(s)[0] + self.potential.value(t, q)

    def jet(self, t, chart, q, p):
        t, q, p = _broadcast(t, q, p)
        rj = cospeed_jet(self.manifold, chart, q, p)
        value, d_q, d_p, d_qq, d_qp, d_pp = compose_radial(*self.profile(rj.s), rj)
        return HamiltonianJet(
            value=value + self.potential.value(t, q),
            d_q=d_q + self.potential.grad(t, q),
            d_p=d_p,
            d_t=self.potential.dt(t, q),
            d_qq=d_qq + self.potential.hess(t, q),
            d_qp=d_qp,
            d_pp=d_pp,
        )

    def first_derivatives(self, t, chart, q, p):
        j = self.jet(t, chart, q, p)
        return j.value, j.d_q, j.d_p, j.d_t


class ExpressionHamiltonian(HamiltonianModel):
    """Hamiltonian given by an expression tree in t, q_i, p_i"""

    def __init__(self, manifold: ManifoldModel, tree):
        if len(manifold.charts) != 1:
            raise ModelConfigError("expression models need a single-chart manifold")
        super().__init__(manifold)
        self.expression = parse_expression(tree)
        check_variables(self.expression, manifold.dim, "p")
        self.autonomous = "t" not in self.expression.variables()

    def evaluate(self, t, chart, q, p):
        t, q, p = _broadcast(t, q, p)
        out = self.expression.evaluate(build_env(t, q, p, "p"))
        return np.broadcast_to(out, t.shape).astype(float)


class FenchelHamiltonian(HamiltonianModel):
    """Numerical Fenchel dual of a Tonelli Lagrangian"""

    derivative_mode = "analytic"

    def __init__(self, lagrangian: LagrangianModel):
        super().__init__(lagrangian.manifold)
        self.lagrangian = lagrangian
        self.autonomous = lagrangian.autonomous
        self.time_periodic = lagrangian.time_periodic

    def evaluate(self, t, chart, q, p):
        return legendre_batch(self.lagrangian, t, chart, q, p)[1]

    def jet(self, t, chart, q, p):
        t, q, p = _broadcast(t, q, p)
        v, value = legendre_batch(self.lagrangian, t, chart, q, p)
        lj = self.lagrangian.jet(t, chart, q, v)
        d_pp = np.linalg.inv(lj.d_vv)
        coupling = np.einsum("mkj,mji->mki", lj.d_qv, d_pp)
        return HamiltonianJet(
            value=value,
            d_q=-lj.d_q,
            d_p=v,
            d_t=-lj.d_t,
            d_qq=-lj.d_qq + np.einsum("mkj,mlj->mkl", coupling, lj.d_qv),
            d_qp=-coupling,
            d_pp=0.5 * (d_pp + np.swapaxes(d_pp, 1, 2)),
        )

    def first_derivatives(self, t, chart, q, p):
        t, q, p = _broadcast(t, q, p)
        v, value = legendre_batch(self.lagrangian, t, chart, q, p)
        lj = self.lagrangian.jet(t, chart, q, v)
        return value, -lj.d_q, v, -lj.d_t


def fenchel_dual(lagrangian: LagrangianModel) -> HamiltonianModel:
    """Closed form for quadratic kinetic-plus-potential Lagrangians, numerical otherwise"""
    if isinstance(lagrangian, KineticPotentialLagrangian) and isinstance(lagrangian.profile, QuadraticProfile):
        return KineticPotentialHamiltonian(
            lagrangian.manifold, QuadraticProfile(1.0 / lagrangian.profile.coef), lagrangian.potential
        )
    return FenchelHamiltonian(lagrangian)


def action_integrand(H: HamiltonianModel, t, chart, q, p) -> np.ndarray:
    """DH[Y] - H = p . dH/dp - H"""
    value, _, d_p, _ = H.first_derivatives(t, chart, q, p)
    return np.einsum("mi,mi->m", np.atleast_2d(p), d_p) - value


def symplectic_form(x: Tuple[np.ndarray, np.ndarray], y: Tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """omega = dp ^ dq on (dq, dp) component pairs"""
    return np.einsum("mi,mi->m", x[1], y[0]) - np.einsum("mi,mi->m", x[0], y[1])


def liouville_field(p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    p = np.atleast_2d(p)
    return np.zeros_like(p), p


# ----------------------------------------------------------------- legendre
def legendre_batch(L: LagrangianModel, t, chart, q, p, tol: float = LEGENDRE_TOL, max_iter: int = LEGENDRE_MAX_ITER):
    """Solve D_vL(t, q, v) = p by damped Newton; returns (v, H)"""
    t, q, p = _broadcast(t, q, p)
    ginv = L.manifold.inverse_metric(chart, q)
    v = np.einsum("mij,mj->mi", ginv, p)
    scale = np.maximum(1.0, np.linalg.norm(p, axis=-1))
    for iteration in range(max_iter + 1):
        lj = L.jet(t, chart, q, v)
        residual = lj.d_v - p
        res_norm = np.linalg.norm(residual, axis=-1)
        active = res_norm > tol * scale
        if not np.any(active):
            return v, np.einsum("mi,mi->m", p, v) - lj.value
        if iteration == max_iter:
            break
        try:
            step = np.linalg.solve(lj.d_vv[active], -residual[active][..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise LegendreError("singular fiber Hessian in Legendre transform") from exc
        alpha = np.ones(step.shape[0])
        ta, qa, pa, va = t[active], q[active], p[active], v[active]
        for _ in range(40):
            trial = va + alpha[:, None] * step
            trial_res = np.linalg.norm(L.d_v(ta, chart, qa, trial) - pa, axis=-1)
            ok = trial_res <= (1.0 - 1e-4 * alpha) * res_norm[active]
            if np.all(ok):
                break
            alpha = np.where(ok, alpha, 0.5 * alpha)
        v[active] = trial
    raise LegendreError(
        f"Legendre Newton did not converge in {max_iter} iterations "
        f"(max residual {float(res_norm.max()):.3e}); L1/L2 may fail on this region"
    )


def legendre(L: LagrangianModel, t: float, x: ChartPoint, p: TangentVector) -> Tuple[TangentVector, float]:
    """Legendre transform of one covector; returns (velocity, H value)"""
    if not p.covariant:
        raise ModelConfigError("legendre expects a cotangent vector")
    v, h = legendre_batch(L, t, x.chart, x.coords[None], p.components[None])
    return TangentVector(x, v[0]), float(h[0])


# ----------------------------------------------------------------- sampling
@dataclass
class FiberSample:
    t: np.ndarray
    charts: np.ndarray
    q: np.ndarray
    x: np.ndarray
    norm: np.ndarray


def unit_directions(n: int, count: int) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        angles = 2.0 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(angles), np.sin(angles)])
    eye = np.eye(n)
    diag = np.ones((1, n)) / np.sqrt(n)
    return np.vstack([eye, -eye, diag, -diag])


def fiber_sample(manifold: ManifoldModel, spec: SampleSpec, covariant: bool = False) -> FiberSample:
    """Deterministic sample of (t, q, v) with fiber norms on a radial grid"""
    charts, points = manifold.sample_points(spec.q_per_axis ** manifold.dim)
    radii = np.linspace(0.0, spec.v_max, spec.n_radii)
    dirs = unit_directions(manifold.dim, spec.n_directions)
    times = np.asarray(spec.t_values, dtype=float)
    it, ip, ir, idir = np.meshgrid(
        np.arange(len(times)), np.arange(len(points)), np.arange(len(radii)), np.arange(len(dirs)), indexing="ij"
    )
    it, ip, ir, idir = (a.ravel() for a in (it, ip, ir, idir))
    q = points[ip]
    u = dirs[idir]
    ch = charts[ip]
    unit_norm = manifold.norm_many(ch, q, u, covariant=covariant)
    x = radii[ir][:, None] * u / unit_norm[:, None]
    return FiberSample(t=times[it], charts=ch, q=q, x=x, norm=radii[ir])


def _metric_many(manifold, charts, q, inverse=False):
    out = np.empty((q.shape[0], manifold.dim, manifold.dim))
    for cid in np.unique(charts):
        mask = charts == cid
        out[mask] = manifold.inverse_metric(cid, q[mask]) if inverse else manifold.metric(cid, q[mask])
    return out


def generalized_eigvalsh(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Eigenvalues of a relative to the positive definite g, ascending"""
    chol = np.linalg.cholesky(g)
    left = np.linalg.solve(chol, a)
    m = np.linalg.solve(chol, np.swapaxes(left, 1, 2))
    return np.linalg.eigvalsh(0.5 * (m + np.swapaxes(m, 1, 2)))


# ------------------------------------------------------------------ checks
def check_tonelli(L: LagrangianModel, sample_spec: Optional[SampleSpec] = None) -> TonelliReport:
    """Sampled check of fiberwise convexity (L1) and superlinearity (L2)"""
    spec = sample_spec or SampleSpec()
    S = fiber_sample(L.manifold, spec)
    jet = jet_many(L, S.t, S.charts, S.q, S.x)
    scale = max(1.0, float(np.abs(jet.d_vv).max()))
    asym = float(np.abs(jet.d_vv - np.swapaxes(jet.d_vv, 1, 2)).max()) / scale
    if asym > spec.symmetry_tol:
        raise TonelliConditionError(f"fiber Hessian asymmetric by {asym:.3e}")
    eig = generalized_eigvalsh(jet.d_vv, _metric_many(L.manifold, S.charts, S.q))[:, 0]
    worst = int(np.argmin(eig))
    ell0 = float(eig[worst])
    if ell0 < -spec.eigen_tol * scale:
        raise TonelliConditionError(
            f"fiber Hessian has eigenvalue {ell0:.3e} at |v| = {S.norm[worst]:.3g}; (L1) fails"
        )
    l1 = Verdict.PASS if ell0 > spec.eigen_tol * scale else Verdict.FAIL_AT_ZERO

    constants, argmax_speeds = {}, {}
    l2 = Verdict.PASS
    for k in sorted(spec.k_values):
        gap = k * S.norm - jet.value
        idx = int(np.argmax(gap))
        constants[f"{float(k):g}"] = float(gap[idx])
        argmax_speeds[f"{float(k):g}"] = float(S.norm[idx])
        if S.norm[idx] >= 0.9 * spec.v_max:
            l2 = Verdict.FAIL

    completeness = Verdict.UNKNOWN
    c_value = None
    try:
        verdict = check_completeness_criterion(fenchel_dual(L), spec.model_copy(update={"n_radii": 21}))
        completeness, c_value = verdict.verdict, verdict.c
    except LegendreError as e:
        logger.warning(f"Completeness check skipped: {e}")

    logger.info(f"Tonelli check: ell0={ell0:.4g} C(1)={constants.get('1', float('nan')):.4g} L1={l1.value} L2={l2.value}")
    return TonelliReport(
        ell0_estimate=ell0,
        ell0_witness_speed=float(S.norm[worst]),
        growth_constants=constants,
        growth_argmax_speeds=argmax_speeds,
        l1_verdict=l1,
        l2_verdict=l2,
        completeness_verdict=completeness,
        completeness_constant=c_value,
        sample=f"{len(S.t)} points, |v| <= {spec.v_max:g}, {spec.n_radii} radii, t in {spec.t_values}",
    )


def check_completeness_criterion(H: HamiltonianModel, sample_spec: Optional[SampleSpec] = None) -> CompletenessVerdict:
    """Smallest sampled c with dH/dt <= c (1 + H), H shifted to be nonnegative"""
    if H.autonomous:
        return CompletenessVerdict(verdict=Verdict.PASS, c=0.0, autonomous=True)
    spec = sample_spec or SampleSpec()
    S = fiber_sample(H.manifold, spec, covariant=True)
    value = np.empty(len(S.t))
    d_t = np.empty(len(S.t))
    for cid in np.unique(S.charts):
        mask = S.charts == cid
        val, _, _, dt = H.first_derivatives(S.t[mask], cid, S.q[mask], S.x[mask])
        value[mask] = val
        d_t[mask] = dt
    shift = float(value.min())
    ratio = d_t / (1.0 + value - shift)
    inner = S.norm <= 0.5 * spec.v_max
    inner_ratio = float(ratio[inner].max())
    outer_ratio = float(ratio[~inner].max())
    failed = outer_ratio > 0 and outer_ratio > 1.1 * max(inner_ratio, 0.0) + 1e-12
    return CompletenessVerdict(
        verdict=Verdict.FAIL if failed else Verdict.PASS,
        c=None if failed else max(0.0, float(ratio.max())),
        autonomous=False,
        shift=shift,
        inner_ratio=inner_ratio,
        outer_ratio=outer_ratio,
    )


def check_h1_h2(
    H: HamiltonianModel,
    a: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    h: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    sample_spec: Optional[SampleSpec] = None,
) -> GrowthVerdict:
    """Sampled (H1) DH[Y] - H >= a(|p|) and (H2) H >= h(|p|), with growth checks"""
    spec = sample_spec or SampleSpec()
    S = fiber_sample(H.manifold, spec, covariant=True)
    value = np.empty(len(S.t))
    integrand = np.empty(len(S.t))
    for cid in np.unique(S.charts):
        mask = S.charts == cid
        val, _, d_p, _ = H.first_derivatives(S.t[mask], cid, S.q[mask], S.x[mask])
        value[mask] = val
        integrand[mask] = np.einsum("mi,mi->m", S.x[mask], d_p) - val
    s = S.norm
    if a is None:
        c0 = float(np.max(s - integrand))
        a_vals = s - c0
    else:
        c0 = float(np.max(s - np.asarray(a(s))))
        a_vals = np.asarray(a(s))
    if h is None:
        c1 = float(np.max(s * np.log1p(s) - value))
        h_vals = s * np.log1p(s) - c1
    else:
        c1 = float(np.max(s * np.log1p(s) - value))
        h_vals = np.asarray(h(s))
    gap1 = integrand - a_vals
    gap2 = value - h_vals
    i1, i2 = int(np.argmin(gap1)), int(np.argmin(gap2))

    vmax = spec.v_max
    outer = s >= 0.75 * vmax
    mid = (s >= 0.25 * vmax) & (s <= 0.5 * vmax)
    inner = s <= 0.25 * vmax
    coercive = integrand[outer].min() > integrand[inner].max()
    superlinear = (value[outer] / s[outer]).min() > (value[mid] / s[mid]).max()
    tol = 1e-12
    return GrowthVerdict(
        h1_verdict=Verdict.PASS if gap1[i1] >= -tol and coercive else Verdict.FAIL,
        h2_verdict=Verdict.PASS if gap2[i2] >= -tol and superlinear else Verdict.FAIL,
        c0=c0,
        c1=c1,
        h1_margin=float(gap1[i1]),
        h2_margin=float(gap2[i2]),
        h1_witness=[float(S.t[i1])] + S.q[i1].tolist() + S.x[i1].tolist(),
        h2_witness=[float(S.t[i2])] + S.q[i2].tolist() + S.x[i2].tolist(),
    )


def check_radial_identity(H: HamiltonianModel, t: float, chart: str, q, p_hat, s_values) -> float:
    """Max relative residual of g'(s) s - g(s) = f(s) along a ray"""
    s = np.asarray(s_values, dtype=float)
    q = np.broadcast_to(np.asarray(q, dtype=float), (len(s), H.manifold.dim))
    p = s[:, None] * np.asarray(p_hat, dtype=float)[None]
    h = 1e-5 * (1.0 + s)
    g = H.evaluate(t, chart, q, p)
    dg = (H.evaluate(t, chart, q, p + h[:, None] * p_hat) - H.evaluate(t, chart, q, p - h[:, None] * p_hat)) / (2 * h)
    f = action_integrand(H, t, chart, q, p)
    return float(np.max(np.abs(dg * s - g - f) / (1.0 + np.abs(f))))


# ---------------------------------------------------------------- registry
def build_potential(kind: str, manifold: ManifoldModel, epsilon: float = 0.1, forcing: float = 0.0) -> Potential:
    if kind == "none":
        return Potential()
    if kind == "cos2":
        if not isinstance(manifold, FlatTorus):
            raise ModelConfigError("the cos2 potential is defined on tori only")
        return CosinePotential(epsilon, forcing)
    raise ModelConfigError(f"unknown potential '{kind}'")


def build_lagrangian(spec, manifold: ManifoldModel) -> LagrangianModel:
    """Build a Lagrangian from a ModelSpec"""
    if spec.kind == "expression":
        if spec.expression is None:
            raise ModelConfigError("expression model needs an expression tree")
        model: LagrangianModel = ExpressionLagrangian(manifold, spec.expression)
    else:
        potential = build_potential(spec.potential, manifold, spec.epsilon, spec.forcing)
        profiles = {"mechanical": QuadraticProfile, "quartic": QuarticProfile}
        if spec.kind not in profiles:
            raise ModelConfigError(f"unknown lagrangian '{spec.kind}'")
        model = KineticPotentialLagrangian(manifold, profiles[spec.kind](), potential)
    if spec.scale != 1.0:
        model = ScaledLagrangian(model, spec.scale)
    return model


def build_hamiltonian(spec, manifold: ManifoldModel) -> HamiltonianModel:
    """Build a Hamiltonian from a ModelSpec; 'dual' is the Fenchel dual of the Lagrangian kinds"""
    if spec.kind == "expression":
        if spec.expression is None:
            raise ModelConfigError("expression model needs an expression tree")
        return ExpressionHamiltonian(manifold, spec.expression)
    potential = build_potential(spec.potential, manifold, spec.epsilon, spec.forcing)
    if spec.kind == "mechanical":
        return KineticPotentialHamiltonian(manifold, QuadraticProfile(spec.scale), potential)
    if spec.kind == "norm":
        return KineticPotentialHamiltonian(manifold, NormProfile(spec.scale), potential)
    raise ModelConfigError(f"unknown hamiltonian '{spec.kind}'")
