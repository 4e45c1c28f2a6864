"""
Tests for the builtin sweep families
"""

import numpy as np
import pytest

from app.core.errors import ModelConfigError
from app.schemas.scenario import FamilySpec
from app.services.pathspace import FixedEndpoints, Periodic
from app.services.families import build_family, detour_path, path_seed, sphere_detour, torus_translation


def test_torus_translation_circle(torus2):
    family = torus_translation(torus2, 1, [0], 0.25, 8, N=4)
    assert len(family) == 8
    assert family.shape == (8,)
    assert np.allclose(family.members[3].nodes, [[0.375, 0.25]] * 5)
    tangents = family.tangents(0)
    assert len(tangents) == 1
    # the neighbor across the seam is taken on its nearest lift
    assert np.allclose(tangents[0], [[0.125, 0.0]] * 5)
    assert family.continuity() == pytest.approx(0.125)


def test_torus_translation_torus(torus2):
    family = torus_translation(torus2, 2, [0, 1], 0.0, 4, N=4)
    assert len(family) == 16
    assert family.parameters.shape == (16, 2)
    tangents = family.tangents(5)
    assert len(tangents) == 2
    assert np.allclose(tangents[0][0], [0.25, 0.0])
    assert np.allclose(tangents[1][0], [0.0, 0.25])


def test_torus_translation_rejects_bad_axes(torus2, sphere):
    with pytest.raises(ModelConfigError):
        torus_translation(torus2, 2, [0], 0.0, 4, N=4)
    with pytest.raises(ModelConfigError):
        torus_translation(torus2, 1, [2], 0.0, 4, N=4)
    with pytest.raises(ModelConfigError):
        torus_translation(sphere, 1, [0], 0.0, 4, N=4)


def test_path_seed_is_closed(torus2):
    family = path_seed(torus2, Periodic(), [0.1, -0.05], 0.02, N=16)
    path = family.members[0]
    assert family.degree == 0
    assert np.allclose(path.nodes[0], path.nodes[-1])
    assert np.allclose(path.nodes[0], [0.1, 0.95])


def test_detour_winding_length(sphere, sphere_endpoints):
    a, b = sphere_endpoints
    straight = detour_path(sphere, a, b, 0, [0.0], 64)
    winding = detour_path(sphere, a, b, 1, [0.0], 64)
    assert straight.segment_lengths().sum() == pytest.approx(1.0, abs=1e-9)
    assert winding.segment_lengths().sum() == pytest.approx(2.0 * np.pi - 1.0, abs=1e-9)


def test_sphere_detour_members_share_endpoints(sphere, sphere_endpoints):
    bc = FixedEndpoints(*sphere_endpoints)
    family = sphere_detour(sphere, bc, 2, 3, 0.6, N=32)
    assert len(family) == 9
    assert family.periodic == (False, False)
    for member in family.members:
        assert bc.constraint_residual(member) == pytest.approx(0.0, abs=1e-12)
    # corner members have one-sided neighbors
    assert len(family.tangents(0)) == 2
    assert family.continuity() < 0.7


def test_sphere_detour_degree_limits(sphere, sphere_endpoints, torus2):
    bc = FixedEndpoints(*sphere_endpoints)
    with pytest.raises(ModelConfigError):
        sphere_detour(sphere, bc, 4, 3, 0.6, N=16)
    with pytest.raises(ModelConfigError):
        sphere_detour(sphere, Periodic(), 1, 3, 0.6, N=16)
    with pytest.raises(ModelConfigError):
        sphere_detour(torus2, bc, 1, 3, 0.6, N=16)


def test_build_family_from_spec(torus2):
    bc = Periodic()
    spec = FamilySpec(name="sweep", generator="torus_translation", degree=1, axes=[1], points=6)
    family = build_family(spec, torus2, bc, 8)
    assert family.name == "sweep" and len(family) == 6
    seed = build_family(FamilySpec(name="min", generator="torus_translation", degree=0, point=[0.5, 0.5]),
                        torus2, bc, 8)
    assert np.allclose(seed.members[0].nodes, 0.5)
    with pytest.raises(ModelConfigError):
        build_family(FamilySpec(name="bad", generator="path_seed", degree=1), torus2, bc, 8)
