"""
Tests for Lagrangian and Hamiltonian R-modifications
"""

import numpy as np
import pytest

from app.core.errors import ModificationError
from app.schemas.analysis import Verdict
from app.schemas.scenario import ModelSpec
from app.services.models import build_lagrangian, check_tonelli
from app.services.modification import (
    LagrangianModification, PsiProfile, build_hamiltonian_modification, build_lagrangian_modification,
    modification_properties, phi_cutoff, smoothstep, verify_modification
)


def test_smoothstep_endpoints():
    s, s1, s2 = smoothstep(np.array([-1.0, 0.0, 0.5, 1.0, 2.0]))
    assert np.allclose(s, [0.0, 0.0, 0.5, 1.0, 1.0])
    assert np.allclose(s1[[0, 1, 3, 4]], 0.0)
    assert s1[2] == pytest.approx(1.875)
    assert np.allclose(s2[[1, 2, 3]], 0.0)


def test_phi_cutoff_shape():
    s = np.linspace(0.0, 3.0, 301)
    value, d1, d2 = phi_cutoff(s)
    assert np.allclose(value[s <= 1.0], s[s <= 1.0])
    assert np.allclose(value[s >= 2.0], 1.5)
    assert d1.min() >= 0.0
    assert d2.max() <= 0.0
    assert np.all(np.diff(value) >= -1e-15)


def test_psi_profile_pieces():
    psi = PsiProfile(R=2.0, mu=3.0)
    value, d1, d2 = psi(np.array([0.0, 4.0, 16.0, 25.0]))
    assert value[0] == 0.0 and value[1] == 0.0
    assert value[2] == pytest.approx(3.0 * 16.0 - 2.0 * 3.0 * 4.0)
    assert value[3] == pytest.approx(3.0 * 25.0 - 24.0)
    assert d1[3] == pytest.approx(3.0)
    assert d2[3] == pytest.approx(0.0)
    _, g1, g2 = psi(np.linspace(0.0, 30.0, 500))
    assert g1.min() >= 0.0 and g2.min() >= 0.0


def test_psi_profile_derivatives_match_the_bump():
    R, mu = 2.0, 3.0
    s = np.linspace(4.5, 15.5, 23)
    value, d1, d2 = PsiProfile(R, mu)(s)
    u = (s - R * R) / (3.0 * R * R)
    assert np.allclose(d2, 20.0 * mu * u * (1.0 - u) ** 3 / (3.0 * R * R))
    h = 1e-5
    up, down = PsiProfile(R, mu)(s + h), PsiProfile(R, mu)(s - h)
    assert np.allclose((up[0] - down[0]) / (2 * h), d1, atol=1e-6)
    assert np.allclose((up[1] - down[1]) / (2 * h), d2, atol=1e-6)


def test_quartic_modification_constants(torus1, small_sample):
    L = build_lagrangian(ModelSpec(kind="quartic"), torus1)
    mod = build_lagrangian_modification(L, 1.0, 0.75, small_sample)
    # peak of |v|^4 / 4 on |v| <= 2 is 4
    assert mod.lam == pytest.approx(6.0)
    assert mod.report.passed
    value = mod.evaluate(0.0, "T", np.array([[0.2]]), np.array([[1.0]]))
    assert value[0] == pytest.approx(0.25)


def test_mechanical_modification_report(mechanical, small_sample):
    C1 = check_tonelli(mechanical, small_sample).C(1)
    mod = build_lagrangian_modification(mechanical, 2.0, C1, small_sample)
    report = mod.report
    assert report.kind == "lagrangian"
    assert [c.clause for c in report.clauses][:3] == ["a", "b", "c"]
    assert report.passed
    assert report.constants["mu"] > 0
    q = np.array([[0.1, 0.6], [0.4, 0.9]])
    v = np.array([[1.0, -1.0], [0.5, 0.2]])
    assert np.allclose(mod.evaluate(0.0, "T", q, v), mechanical.evaluate(0.0, "T", q, v))


def test_modification_properties_pass(mechanical, small_sample):
    C1 = check_tonelli(mechanical, small_sample).C(1)
    mod = build_lagrangian_modification(mechanical, 2.0, C1, small_sample)
    verdicts = {p.name: p.verdict for p in modification_properties(mod, small_sample)}
    assert set(verdicts.values()) == {Verdict.PASS}
    assert "psi_joint_smoothness" in verdicts


def test_modified_jet_matches_evaluate(mechanical, small_sample):
    mod = build_lagrangian_modification(mechanical, 2.0, 0.7, small_sample)
    q = np.array([[0.3, 0.1]])
    v = np.array([[5.0, 3.0]])
    assert mod.jet(0.0, "T", q, v).value[0] == pytest.approx(mod.evaluate(0.0, "T", q, v)[0])


def test_corrupted_psi_is_reported(free_particle, small_sample):
    bad = LagrangianModification(free_particle, 1.0, 10.0, 1.0, 0.5,
                                 psi=lambda s: (-s, -np.ones_like(s), np.zeros_like(s)))
    report = verify_modification(bad, small_sample)
    assert not report.passed
    assert report.clause("a").verdict == Verdict.FAIL
    assert report.clause("b").verdict == Verdict.FAIL
    assert report.clause("a").witness is not None


def test_nonpositive_radius_rejected(free_particle, pendulum_hamiltonian):
    with pytest.raises(ModificationError):
        build_lagrangian_modification(free_particle, 0.0, 0.5)
    with pytest.raises(ModificationError):
        build_hamiltonian_modification(pendulum_hamiltonian, -1.0)


def test_hamiltonian_modification_pendulum(pendulum_hamiltonian, small_sample):
    mod = build_hamiltonian_modification(pendulum_hamiltonian, 5.0, sample_spec=small_sample)
    report = mod.report
    assert report.kind == "hamiltonian"
    assert report.passed
    assert report.constants["h0"] > 0
    q = np.array([[0.2], [0.7]])
    p = np.array([[3.0], [-4.5]])
    assert np.allclose(mod.evaluate(0.0, "T", q, p), pendulum_hamiltonian.evaluate(0.0, "T", q, p))
    far = np.array([[50.0]])
    assert mod.evaluate(0.0, "T", q[:1], far)[0] == pytest.approx(mod.C * 2500.0)


def test_unknown_modification_kind(free_particle):
    with pytest.raises(ModificationError):
        verify_modification(free_particle)
