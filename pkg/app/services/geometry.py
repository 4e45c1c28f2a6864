"""
Charts, metrics and tangent/cotangent algebra for the builtin compact manifolds
"""

import logging
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import ChartError, ModelConfigError

logger = logging.getLogger(__name__)

FD_METRIC_STEP = 1e-5


@dataclass(frozen=True)
class ChartPoint:
    """A point given by its coordinates in one chart"""
    chart: str
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))


@dataclass(frozen=True)
class TangentVector:
    """Tangent (or cotangent, when covariant) vector based at a chart point"""
    base: ChartPoint
    components: np.ndarray
    covariant: bool = False

    def __post_init__(self):
        object.__setattr__(self, "components", np.asarray(self.components, dtype=float))


@dataclass(frozen=True)
class Transition:
    """Coordinate change between two charts with first and second derivatives"""
    src: str
    dst: str
    kind: str = "identity"

    def apply(self, q: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return np.array(q, dtype=float)
        r2 = np.sum(q * q, axis=-1, keepdims=True)
        return q / r2

    def jacobian(self, q: np.ndarray) -> np.ndarray:
        m, n = q.shape
        if self.kind == "identity":
            return np.broadcast_to(np.eye(n), (m, n, n)).copy()
        r2 = np.sum(q * q, axis=-1)[:, None, None]
        return (np.eye(n)[None] * r2 - 2.0 * q[:, :, None] * q[:, None, :]) / r2 ** 2

    def hessian(self, q: np.ndarray) -> np.ndarray:
        """Second derivatives, indexed [point, component k, i, j]"""
        m, n = q.shape
        if self.kind == "identity":
            return np.zeros((m, n, n, n))
        eye = np.eye(n)
        r2 = np.sum(q * q, axis=-1)[:, None, None, None]
        x_k = q[:, :, None, None]
        x_i = q[:, None, :, None]
        x_j = q[:, None, None, :]
        first = (eye[None, :, :, None] * x_j + eye[None, :, None, :] * x_i + eye[None, None, :, :] * x_k)
        return -2.0 * first / r2 ** 2 + 8.0 * x_k * x_i * x_j / r2 ** 3


@dataclass(frozen=True)
class Chart:
    """Chart with a domain predicate around its center"""
    id: str
    center: np.ndarray
    max_radius: float = np.inf
    transitions: Dict[str, Transition] = field(default_factory=dict)

    def contains(self, coords: np.ndarray) -> np.ndarray:
        coords = np.atleast_2d(coords)
        return np.all(np.isfinite(coords), axis=-1) & (np.linalg.norm(coords - self.center, axis=-1) <= self.max_radius)


def _as_batch(q) -> np.ndarray:
    return np.atleast_2d(np.asarray(q, dtype=float))


def _chart_array(charts, m: int) -> np.ndarray:
    if isinstance(charts, str):
        return np.full(m, charts, dtype=object)
    return np.asarray(charts, dtype=object)


class ManifoldModel(ABC):
    """Compact Riemannian manifold described by a finite atlas"""

    name: str = "manifold"
    is_flat: bool = False

    def __init__(self, dim: int, charts: Sequence[Chart], injectivity_radius: float):
        self.dim = dim
        self.charts: Dict[str, Chart] = {c.id: c for c in charts}
        self.injectivity_radius = injectivity_radius

    @property
    def chart_ids(self) -> Tuple[str, ...]:
        return tuple(self.charts)

    @property
    def default_chart(self) -> str:
        return self.chart_ids[0]

    def _check_chart(self, chart: str):
        if chart not in self.charts:
            raise ChartError(f"unknown chart '{chart}' on {self.name}")

    # ------------------------------------------------------------------ metric
    @abstractmethod
    def metric(self, chart: str, q) -> np.ndarray:
        """Metric tensors g_ij, shape (m, n, n)"""

    def metric_derivative(self, chart: str, q) -> np.ndarray:
        """Central differences of the metric, indexed [point, k, i, j] = d_k g_ij"""
        q = _as_batch(q)
        m, n = q.shape
        out = np.empty((m, n, n, n))
        h = FD_METRIC_STEP * (1.0 + np.linalg.norm(q, axis=-1))
        for k in range(n):
            step = np.zeros_like(q)
            step[:, k] = h
            out[:, k] = (self.metric(chart, q + step) - self.metric(chart, q - step)) / (2.0 * h[:, None, None])
        return out

    def metric_second_derivative(self, chart: str, q) -> np.ndarray:
        """Second derivatives of the metric, indexed [point, k, l, i, j]"""
        q = _as_batch(q)
        m, n = q.shape
        out = np.empty((m, n, n, n, n))
        h = FD_METRIC_STEP * (1.0 + np.linalg.norm(q, axis=-1))
        for l in range(n):
            step = np.zeros_like(q)
            step[:, l] = h
            plus = self.metric_derivative(chart, q + step)
            minus = self.metric_derivative(chart, q - step)
            out[:, :, l] = (plus - minus) / (2.0 * h[:, None, None, None])
        return 0.5 * (out + np.swapaxes(out, 1, 2))

    def inverse_metric(self, chart: str, q) -> np.ndarray:
        return np.linalg.inv(self.metric(chart, q))

    def christoffel(self, chart: str, q) -> np.ndarray:
        """Christoffel symbols indexed [point, k, i, j] = Gamma^k_ij"""
        q = _as_batch(q)
        dg = self.metric_derivative(chart, q)
        ginv = self.inverse_metric(chart, q)
        # lowered symbols Gamma_{l,ij} = (d_i g_lj + d_j g_li - d_l g_ij) / 2
        lowered = 0.5 * (np.einsum("milj->mlij", dg) + np.einsum("mjli->mlij", dg) - dg)
        return np.einsum("mkl,mlij->mkij", ginv, lowered)

    def gaussian_curvature(self, chart: str, q) -> np.ndarray:
        """Gaussian curvature of a surface from differentiated Christoffel symbols"""
        if self.dim != 2:
            raise ChartError("gaussian curvature is only defined for surfaces")
        q = _as_batch(q)
        gamma = self.christoffel(chart, q)
        h = FD_METRIC_STEP * (1.0 + np.linalg.norm(q, axis=-1))
        dgamma = np.empty((q.shape[0], 2, 2, 2, 2))
        for k in range(2):
            step = np.zeros_like(q)
            step[:, k] = h
            dgamma[:, k] = (self.christoffel(chart, q + step) - self.christoffel(chart, q - step)) / (2.0 * h[:, None, None, None])
        # R^r_{212} = d_1 G^r_22 - d_2 G^r_12 + G^r_1l G^l_22 - G^r_2l G^l_12
        riemann = (
            dgamma[:, 0, :, 1, 1]
            - dgamma[:, 1, :, 0, 1]
            + np.einsum("mrl,ml->mr", gamma[:, :, 0, :], gamma[:, :, 1, 1])
            - np.einsum("mrl,ml->mr", gamma[:, :, 1, :], gamma[:, :, 0, 1])
        )
        g = self.metric(chart, q)
        return np.einsum("mr,mr->m", g[:, 0, :], riemann) / np.linalg.det(g)

    # ------------------------------------------------------------- norms
    def norm(self, chart: str, q, v, covariant: bool = False) -> np.ndarray:
        q = _as_batch(q)
        v = _as_batch(v)
        g = self.inverse_metric(chart, q) if covariant else self.metric(chart, q)
        return np.sqrt(np.maximum(np.einsum("mi,mij,mj->m", v, g, v), 0.0))

    def norm_many(self, charts, q, v, covariant: bool = False) -> np.ndarray:
        """Metric norms for points spread over several charts"""
        q = _as_batch(q)
        v = _as_batch(v)
        charts = _chart_array(charts, q.shape[0])
        out = np.empty(q.shape[0])
        for cid in np.unique(charts):
            mask = charts == cid
            out[mask] = self.norm(cid, q[mask], v[mask], covariant)
        return out

    # --------------------------------------------------------- transitions
    def transition(self, src: str, dst: str) -> Transition:
        self._check_chart(src)
        self._check_chart(dst)
        if src == dst:
            return Transition(src, dst)
        try:
            return self.charts[src].transitions[dst]
        except KeyError as exc:
            raise ChartError(f"no transition {src} -> {dst} on {self.name}") from exc

    def pushforward(self, src: str, dst: str, q, v, covariant: bool = False):
        """Move (q, v) to another chart; covectors transform by the inverse transpose"""
        q = _as_batch(q)
        v = _as_batch(v)
        tr = self.transition(src, dst)
        jac = tr.jacobian(q)
        if covariant:
            w = np.linalg.solve(np.swapaxes(jac, 1, 2), v[..., None])[..., 0]
        else:
            w = np.einsum("mij,mj->mi", jac, v)
        return tr.apply(q), w

    def align(self, charts_a, a, charts_b, b):
        """Express nodes b in the charts of nodes a

        Returns (b expressed near a, Jacobian d(b_new)/d(b), second derivatives).
        """
        a = _as_batch(a)
        b = _as_batch(b)
        m, n = b.shape
        charts_a = _chart_array(charts_a, m)
        charts_b = _chart_array(charts_b, m)
        out = np.array(b, dtype=float)
        jac = np.broadcast_to(np.eye(n), (m, n, n)).copy()
        hess = np.zeros((m, n, n, n))
        for src in np.unique(charts_b):
            for dst in np.unique(charts_a):
                mask = (charts_b == src) & (charts_a == dst)
                if src == dst or not np.any(mask):
                    continue
                tr = self.transition(src, dst)
                out[mask] = tr.apply(b[mask])
                jac[mask] = tr.jacobian(b[mask])
                hess[mask] = tr.hessian(b[mask])
        return out, jac, hess

    def difference(self, chart_a: str, a, chart_b: str, b) -> np.ndarray:
        """Coordinate difference b minus a, computed in the chart of a"""
        a = _as_batch(a)
        b_near, _, _ = self.align(chart_a, a, chart_b, _as_batch(b))
        return b_near - a

    # ---------------------------------------------------------- points
    @abstractmethod
    def rebase(self, chart: str, q) -> Tuple[np.ndarray, np.ndarray]:
        """Most central chart representation; returns (charts, coords)"""

    def rebase_point(self, x: ChartPoint) -> ChartPoint:
        charts, coords = self.rebase(x.chart, x.coords)
        return ChartPoint(str(charts[0]), coords[0])

    def rebase_many(self, charts, q) -> Tuple[np.ndarray, np.ndarray]:
        q = _as_batch(q)
        charts = _chart_array(charts, q.shape[0])
        new_charts = charts.copy()
        new_q = np.array(q, dtype=float)
        for cid in np.unique(charts):
            mask = charts == cid
            c, coords = self.rebase(cid, q[mask])
            new_charts[mask] = c
            new_q[mask] = coords
        return new_charts, new_q

    @abstractmethod
    def exp_map(self, chart: str, q, v) -> Tuple[np.ndarray, np.ndarray]:
        """Riemannian exponential; returns (charts, coords)"""

    @abstractmethod
    def distance(self, charts_a, a, charts_b, b) -> np.ndarray:
        """Geodesic distance between paired points"""

    @abstractmethod
    def interpolate(self, charts_a, a, charts_b, b, s: float) -> Tuple[np.ndarray, np.ndarray]:
        """Point at fraction s along the minimizing geodesic from a to b"""

    @abstractmethod
    def sample_points(self, count: int, rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Deterministic lattice (rng None) or random points; returns (charts, coords)"""


class FlatTorus(ManifoldModel):
    """Flat torus R^n / Z^n with representatives in [0, 1)^n"""

    is_flat = True

    def __init__(self, dim: int):
        if dim < 1:
            raise ModelConfigError("torus dimension must be positive")
        super().__init__(dim, [Chart("T", np.zeros(dim))], injectivity_radius=0.5)
        self.name = f"torus{dim}"

    def metric(self, chart, q):
        q = _as_batch(q)
        return np.broadcast_to(np.eye(self.dim), (q.shape[0], self.dim, self.dim)).copy()

    def metric_derivative(self, chart, q):
        q = _as_batch(q)
        return np.zeros((q.shape[0],) + (self.dim,) * 3)

    def metric_second_derivative(self, chart, q):
        q = _as_batch(q)
        return np.zeros((q.shape[0],) + (self.dim,) * 4)

    def christoffel(self, chart, q):
        q = _as_batch(q)
        return np.zeros((q.shape[0],) + (self.dim,) * 3)

    @staticmethod
    def wrap(x: np.ndarray) -> np.ndarray:
        return x - np.round(x)

    def align(self, charts_a, a, charts_b, b):
        a = _as_batch(a)
        b = _as_batch(b)
        m, n = b.shape
        return a + self.wrap(b - a), np.broadcast_to(np.eye(n), (m, n, n)).copy(), np.zeros((m, n, n, n))

    def rebase(self, chart, q):
        self._check_chart(chart)
        q = _as_batch(q)
        if not np.all(np.isfinite(q)):
            raise ChartError("non-finite torus coordinates")
        coords = np.mod(q, 1.0)
        coords[coords >= 1.0] = 0.0
        return np.full(q.shape[0], "T", dtype=object), coords

    def exp_map(self, chart, q, v):
        return self.rebase(chart, _as_batch(q) + _as_batch(v))

    def distance(self, charts_a, a, charts_b, b):
        return np.linalg.norm(self.wrap(_as_batch(b) - _as_batch(a)), axis=-1)

    def interpolate(self, charts_a, a, charts_b, b, s):
        a = _as_batch(a)
        return self.rebase("T", a + s * self.wrap(_as_batch(b) - a))

    def sample_points(self, count, rng=None):
        if rng is None:
            per_axis = max(1, int(round(count ** (1.0 / self.dim))))
            axes = [np.arange(per_axis) / per_axis] * self.dim
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        else:
            grid = rng.random((count, self.dim))
        return np.full(grid.shape[0], "T", dtype=object), grid


class RoundSphere(ManifoldModel):
    """Unit 2-sphere with two stereographic charts

    Chart "N" projects from the north pole (centered on the south pole),
    chart "S" projects from the south pole. Both carry the metric
    4 / (1 + |q|^2)^2 I and the transition q -> q / |q|^2.
    """

    name = "sphere2"
    SWITCH_RADIUS = 2.0

    def __init__(self):
        inversion_ns = Transition("N", "S", kind="inversion")
        inversion_sn = Transition("S", "N", kind="inversion")
        charts = [
            Chart("N", np.zeros(2), transitions={"S": inversion_ns}),
            Chart("S", np.zeros(2), transitions={"N": inversion_sn}),
        ]
        super().__init__(2, charts, injectivity_radius=np.pi)

    @staticmethod
    def _conformal_factor(q):
        return 4.0 / (1.0 + np.sum(q * q, axis=-1)) ** 2

    def metric(self, chart, q):
        self._check_chart(chart)
        q = _as_batch(q)
        return self._conformal_factor(q)[:, None, None] * np.eye(2)[None]

    def metric_derivative(self, chart, q):
        self._check_chart(chart)
        q = _as_batch(q)
        w = 1.0 + np.sum(q * q, axis=-1)
        df = -16.0 * q / w[:, None] ** 3
        return df[:, :, None, None] * np.eye(2)[None, None]

    def metric_second_derivative(self, chart, q):
        self._check_chart(chart)
        q = _as_batch(q)
        w = (1.0 + np.sum(q * q, axis=-1))[:, None, None]
        ddf = -16.0 * np.eye(2)[None] / w ** 3 + 96.0 * q[:, :, None] * q[:, None, :] / w ** 4
        return ddf[:, :, :, None, None] * np.eye(2)[None, None, None]

    def inverse_metric(self, chart, q):
        q = _as_batch(q)
        return (1.0 / self._conformal_factor(q))[:, None, None] * np.eye(2)[None]

    # ambient R^3 embedding
    def to_ambient(self, chart: str, q) -> np.ndarray:
        self._check_chart(chart)
        q = _as_batch(q)
        r2 = np.sum(q * q, axis=-1)
        xy = 2.0 * q / (1.0 + r2)[:, None]
        z = (r2 - 1.0) / (r2 + 1.0)
        if chart == "S":
            z = -z
        return np.column_stack([xy, z])

    def ambient_velocity(self, chart: str, q, v) -> np.ndarray:
        q = _as_batch(q)
        v = _as_batch(v)
        w = 1.0 + np.sum(q * q, axis=-1)
        qv = np.sum(q * v, axis=-1)
        dxy = 2.0 * v / w[:, None] - 4.0 * q * (qv / w ** 2)[:, None]
        dz = 4.0 * qv / w ** 2
        if chart == "S":
            dz = -dz
        return np.column_stack([dxy, dz])

    def from_ambient(self, points, prefer: Optional[str] = None) -> Tuple[np.ndarray, np.ndarray]:
        points = _as_batch(points)
        points = points / np.linalg.norm(points, axis=-1, keepdims=True)
        charts = np.where(points[:, 2] <= 0.0, "N", "S").astype(object)
        if prefer is not None:
            # keep the preferred chart while the point stays inside its switch radius
            denom = 1.0 - points[:, 2] if prefer == "N" else 1.0 + points[:, 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                radius = np.linalg.norm(points[:, :2], axis=-1) / denom
            charts = np.where(np.isfinite(radius) & (radius <= self.SWITCH_RADIUS), prefer, charts).astype(object)
        coords = np.empty((points.shape[0], 2))
        north = charts == "N"
        coords[north] = points[north, :2] / (1.0 - points[north, 2])[:, None]
        coords[~north] = points[~north, :2] / (1.0 + points[~north, 2])[:, None]
        return charts, coords

    def rebase(self, chart, q):
        self._check_chart(chart)
        q = _as_batch(q)
        if not np.all(np.isfinite(q)):
            raise ChartError("non-finite sphere coordinates")
        charts = np.full(q.shape[0], chart, dtype=object)
        coords = np.array(q, dtype=float)
        outside = np.linalg.norm(q, axis=-1) > self.SWITCH_RADIUS
        if np.any(outside):
            other = "S" if chart == "N" else "N"
            coords[outside] = self.transition(chart, other).apply(q[outside])
            charts[outside] = other
        return charts, coords

    def exp_map(self, chart, q, v):
        q = _as_batch(q)
        p = self.to_ambient(chart, q)
        vel = self.ambient_velocity(chart, q, v)
        speed = np.linalg.norm(vel, axis=-1)
        safe = np.where(speed > 0, speed, 1.0)
        moved = np.cos(speed)[:, None] * p + (np.sin(speed) / safe)[:, None] * vel
        return self.from_ambient(moved, prefer=chart)

    def _ambient_many(self, charts, q):
        q = _as_batch(q)
        charts = _chart_array(charts, q.shape[0])
        out = np.empty((q.shape[0], 3))
        for cid in np.unique(charts):
            mask = charts == cid
            out[mask] = self.to_ambient(cid, q[mask])
        return out

    def distance(self, charts_a, a, charts_b, b):
        pa = self._ambient_many(charts_a, a)
        pb = self._ambient_many(charts_b, b)
        chord = np.linalg.norm(pa - pb, axis=-1)
        return 2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))

    def interpolate(self, charts_a, a, charts_b, b, s):
        pa = self._ambient_many(charts_a, a)
        pb = self._ambient_many(charts_b, b)
        omega = np.arccos(np.clip(np.sum(pa * pb, axis=-1), -1.0, 1.0))
        small = omega < 1e-12
        sin_omega = np.where(small, 1.0, np.sin(omega))
        wa = np.where(small, 1.0 - s, np.sin((1.0 - s) * omega) / sin_omega)
        wb = np.where(small, s, np.sin(s * omega) / sin_omega)
        return self.from_ambient(wa[:, None] * pa + wb[:, None] * pb)

    def sample_points(self, count, rng=None):
        if rng is None:
            # Fibonacci lattice
            k = np.arange(count) + 0.5
            z = 1.0 - 2.0 * k / count
            phi = np.pi * (1.0 + 5.0 ** 0.5) * k
            r = np.sqrt(1.0 - z * z)
            points = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
        else:
            points = rng.normal(size=(count, 3))
        return self.from_ambient(points)


def norm(manifold: ManifoldModel, x: ChartPoint, v: TangentVector) -> float:
    """Riemannian norm of a tangent vector, or of a covector via the inverse metric"""
    if v.base.chart != x.chart or not np.allclose(v.base.coords, x.coords):
        raise ChartError(f"vector based at {v.base.chart}:{v.base.coords} used at {x.chart}:{x.coords}")
    return float(manifold.norm(x.chart, x.coords, v.components, covariant=v.covariant)[0])


def build_torus(n: int) -> FlatTorus:
    return FlatTorus(n)


def build_sphere2() -> RoundSphere:
    return RoundSphere()


def build_manifold(name: str) -> ManifoldModel:
    """Resolve 'torus<n>' or 'sphere2'"""
    match = re.fullmatch(r"torus(\d+)", name)
    if match:
        return build_torus(int(match.group(1)))
    if name == "sphere2":
        return build_sphere2()
    raise ModelConfigError(f"unknown manifold '{name}'")
