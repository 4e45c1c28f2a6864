"""
Builtin sweep families: parameterized sets of paths standing in for
cycles of the path space
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import ModelConfigError
from app.services.geometry import ChartPoint, FlatTorus, ManifoldModel, RoundSphere
from app.services.pathspace import (
    BoundaryCondition, DiscretePath, FixedEndpoints, constant_path, geodesic_path, path_from_function
)

logger = logging.getLogger(__name__)

REPARAMETRIZATION = 0.1


@dataclass
class SweepFamily:
    """Paths on a parameter grid; periodic axes wrap around"""
    name: str
    degree: int
    shape: Tuple[int, ...]
    periodic: Tuple[bool, ...]
    members: List[DiscretePath]
    parameters: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __len__(self) -> int:
        return len(self.members)

    def with_members(self, members: Sequence[DiscretePath]) -> "SweepFamily":
        return SweepFamily(self.name, self.degree, self.shape, self.periodic, list(members), self.parameters)

    def _neighbors(self, i: int):
        """Per parameter axis: (previous, next) member indices, None at clamped ends"""
        idx = np.unravel_index(i, self.shape)
        out = []
        for axis, size in enumerate(self.shape):
            pair = []
            for step in (-1, 1):
                j = list(idx)
                j[axis] += step
                if 0 <= j[axis] < size:
                    pair.append(int(np.ravel_multi_index(j, self.shape)))
                elif self.periodic[axis] and size > 1:
                    j[axis] %= size
                    pair.append(int(np.ravel_multi_index(j, self.shape)))
                else:
                    pair.append(None)
            out.append(tuple(pair))
        return out

    def tangents(self, i: int) -> List[np.ndarray]:
        """Central differences of the family map at member i, in member i's node charts"""
        base = self.members[i]
        out = []
        for prev, nxt in self._neighbors(i):
            if prev is None and nxt is None:
                continue
            ahead = _node_difference(base, self.members[nxt]) if nxt is not None else np.zeros_like(base.nodes)
            behind = _node_difference(base, self.members[prev]) if prev is not None else np.zeros_like(base.nodes)
            span = (nxt is not None) + (prev is not None)
            out.append((ahead - behind) / span)
        return out

    def continuity(self) -> float:
        """Max C0 distance between grid neighbors"""
        worst = 0.0
        for i in range(len(self.members)):
            for _, nxt in self._neighbors(i):
                if nxt is not None:
                    worst = max(worst, self.members[i].c0_distance(self.members[nxt]))
        return worst


def _node_difference(a: DiscretePath, b: DiscretePath) -> np.ndarray:
    aligned, _, _ = a.manifold.align(a.chart_array, a.nodes, b.chart_array, b.nodes)
    return aligned - a.nodes


# ------------------------------------------------------------------ torus
def torus_translation(manifold: ManifoldModel, degree: int, axes: Sequence[int], offset: float, points: int,
                      N: int, name: str = "torus_translation") -> SweepFamily:
    """Constant loops sweeping the coordinate subtorus spanned by axes; other coordinates at offset"""
    if not isinstance(manifold, FlatTorus):
        raise ModelConfigError("torus_translation needs a torus")
    axes = list(axes) or list(range(degree))
    if len(axes) != degree:
        raise ModelConfigError(f"degree {degree} family needs {degree} axes, got {axes}")
    if any(a >= manifold.dim for a in axes):
        raise ModelConfigError(f"axes {axes} out of range for {manifold.name}")
    grid = np.arange(points) / points
    shape = (points,) * degree if degree else (1,)
    members, params = [], []
    for combo in itertools.product(grid, repeat=degree):
        q = np.full(manifold.dim, float(offset))
        q[axes] = combo
        members.append(constant_path(manifold, ChartPoint("T", q), N))
        params.append(list(combo))
    return SweepFamily(name, degree, shape, (True,) * len(shape), members, np.asarray(params))


def path_seed(manifold: ManifoldModel, bc: BoundaryCondition, point: Optional[Sequence[float]], bump: float,
              N: int, name: str = "seed") -> SweepFamily:
    """Degree-0 family: one path near a point with a periodic bump"""
    if isinstance(bc, FixedEndpoints):
        return sphere_detour(manifold, bc, 0, 1, bump, N, name) if isinstance(manifold, RoundSphere) else \
            SweepFamily(name, 0, (1,), (False,), [_endpoint_segment(manifold, bc, N)])
    center = np.asarray(point if point is not None else np.zeros(manifold.dim), dtype=float)
    direction = np.ones(manifold.dim) / np.sqrt(manifold.dim)
    path = path_from_function(
        manifold, lambda t: center[None] + bump * np.sin(2.0 * np.pi * t)[:, None] * direction[None], N
    )
    return SweepFamily(name, 0, (1,), (False,), [path])


def _endpoint_segment(manifold, bc: FixedEndpoints, N):
    return geodesic_path(manifold, bc.start, bc.end, N)


# ----------------------------------------------------------------- sphere
SWEEP_ANGLES = {
    0: lambda theta: theta,
    1: lambda theta: -(2.0 * np.pi - theta),
    2: lambda theta: 2.0 * np.pi + theta,
    3: lambda theta: -(4.0 * np.pi - theta),
}


def detour_path(sphere: RoundSphere, start: ChartPoint, end: ChartPoint, degree: int,
                coefficients: Sequence[float], N: int) -> DiscretePath:
    """Great-circle path of the given winding with a normal deformation sum_j a_j sin(j pi t)"""
    p0 = sphere.to_ambient(start.chart, start.coords)[0]
    p1 = sphere.to_ambient(end.chart, end.coords)[0]
    theta = float(np.arccos(np.clip(p0 @ p1, -1.0, 1.0)))
    in_plane = p1 - (p1 @ p0) * p0
    if np.linalg.norm(in_plane) < 1e-12:
        raise ModelConfigError("detour families need non-antipodal, distinct endpoints")
    e2 = in_plane / np.linalg.norm(in_plane)
    binormal = np.cross(p0, e2)
    t = np.arange(N + 1) / N
    tau = t + REPARAMETRIZATION * np.sin(2.0 * np.pi * t) / (2.0 * np.pi)
    phi = SWEEP_ANGLES[degree](theta) * tau
    w = np.zeros_like(t)
    for j, a in enumerate(coefficients, start=1):
        w += a * np.sin(j * np.pi * t)
    circle = np.cos(phi)[:, None] * p0[None] + np.sin(phi)[:, None] * e2[None]
    points = np.cos(w)[:, None] * circle + np.sin(w)[:, None] * binormal[None]
    charts, coords = sphere.from_ambient(points)
    charts[0], coords[0] = start.chart, start.coords
    charts[-1], coords[-1] = end.chart, end.coords
    return DiscretePath.from_nodes(sphere, coords, charts)


def sphere_detour(manifold: ManifoldModel, bc: BoundaryCondition, degree: int, points: int, amplitude: float,
                  N: int, name: str = "sphere_detour") -> SweepFamily:
    """Detours around the great circle through the endpoints, swept by degree normal modes"""
    if not isinstance(manifold, RoundSphere):
        raise ModelConfigError("sphere_detour needs the round sphere")
    if not isinstance(bc, FixedEndpoints):
        raise ModelConfigError("sphere_detour needs fixed endpoints")
    if degree not in SWEEP_ANGLES:
        raise ModelConfigError(f"detour families exist up to degree {max(SWEEP_ANGLES)}")
    if degree == 0:
        path = detour_path(manifold, bc.start, bc.end, 0, [amplitude], N)
        return SweepFamily(name, 0, (1,), (False,), [path], np.array([[amplitude]]))
    grid = np.linspace(-amplitude, amplitude, points)
    members, params = [], []
    for combo in itertools.product(grid, repeat=degree):
        members.append(detour_path(manifold, bc.start, bc.end, degree, combo, N))
        params.append(list(combo))
    return SweepFamily(name, degree, (points,) * degree, (False,) * degree, members, np.asarray(params))


def build_family(spec, manifold: ManifoldModel, bc: BoundaryCondition, N: int) -> SweepFamily:
    """Build a sweep family from a FamilySpec"""
    if spec.generator == "torus_translation":
        if spec.degree == 0:
            point = spec.point if spec.point is not None else [spec.offset] * manifold.dim
            return path_seed(manifold, bc, point, 0.0, N, spec.name)
        return torus_translation(manifold, spec.degree, spec.axes, spec.offset, spec.points, N, spec.name)
    if spec.generator == "path_seed":
        if spec.degree != 0:
            raise ModelConfigError("path_seed families have degree 0")
        return path_seed(manifold, bc, spec.point, spec.bump, N, spec.name)
    if spec.generator == "sphere_detour":
        return sphere_detour(manifold, bc, spec.degree, spec.points, spec.amplitude, N, spec.name)
    raise ModelConfigError(f"unknown family generator '{spec.generator}'")
