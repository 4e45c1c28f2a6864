"""
Tests for Lagrangian and Hamiltonian models, sampled checks and duality
"""

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from app.core.errors import ModelConfigError
from app.schemas.analysis import SampleSpec, Verdict
from app.schemas.scenario import ModelSpec
from app.services.geometry import ChartPoint, TangentVector
from app.services.models import (
    FenchelHamiltonian, FiniteDifferenceLagrangian, KineticPotentialHamiltonian, action_integrand,
    build_hamiltonian, build_lagrangian, check_completeness_criterion, check_h1_h2, check_radial_identity,
    check_tonelli, fenchel_dual, legendre, legendre_batch, liouville_field, symplectic_form
)


def test_legendre_free_particle(free_particle):
    x = ChartPoint("T", [0.1, 0.2])
    v, h = legendre(free_particle, 0.0, x, TangentVector(x, [3.0, 4.0], covariant=True))
    assert np.allclose(v.components, [3.0, 4.0])
    assert h == pytest.approx(12.5)


def test_legendre_quartic_one_dimensional(torus1):
    L = build_lagrangian(ModelSpec(kind="quartic"), torus1)
    x = ChartPoint("T", [0.3])
    v, h = legendre(L, 0.0, x, TangentVector(x, [8.0], covariant=True))
    assert v.components[0] == pytest.approx(2.0, rel=1e-10)
    assert h == pytest.approx(12.0, rel=1e-10)


def test_legendre_needs_a_covector(free_particle):
    x = ChartPoint("T", [0.1, 0.2])
    with pytest.raises(ModelConfigError):
        legendre(free_particle, 0.0, x, TangentVector(x, [1.0, 0.0]))


def test_tonelli_free_particle(free_particle, small_sample):
    report = check_tonelli(free_particle, small_sample)
    assert report.ell0_estimate == pytest.approx(1.0)
    assert report.C(1) == pytest.approx(0.5)
    assert report.l1_verdict == Verdict.PASS
    assert report.l2_verdict == Verdict.PASS
    assert report.completeness_verdict == Verdict.PASS


def test_tonelli_quartic_degenerates_at_zero(torus1, small_sample):
    L = build_lagrangian(ModelSpec(kind="quartic"), torus1)
    report = check_tonelli(L, small_sample)
    assert report.l1_verdict == Verdict.FAIL_AT_ZERO
    assert report.l2_verdict == Verdict.PASS
    assert report.C(1) == pytest.approx(0.75)


def test_tonelli_pendulum_growth_constant(torus1, small_sample):
    # |v|^2 / 2 - cos(2 pi q): C(1) = 1/2 + 1
    L = build_lagrangian(ModelSpec(kind="mechanical", potential="cos2", epsilon=1.0), torus1)
    report = check_tonelli(L, small_sample)
    assert report.C(1) == pytest.approx(1.5)


def test_growth_constants_nondecreasing(mechanical, small_sample):
    report = check_tonelli(mechanical, small_sample)
    values = [report.growth_constants[k] for k in sorted(report.growth_constants, key=float)]
    assert values == sorted(values)


def test_analytic_jet_matches_finite_differences(mechanical):
    rng = np.random.default_rng(3)
    t = rng.uniform(0, 1, 100)
    q = rng.uniform(0, 1, (100, 2))
    v = rng.uniform(-3, 3, (100, 2))
    exact = mechanical.jet(t, "T", q, v)
    approx = FiniteDifferenceLagrangian(mechanical).jet(t, "T", q, v)
    assert np.allclose(approx.d_v, exact.d_v, rtol=1e-5, atol=1e-6)
    assert np.allclose(approx.d_q, exact.d_q, rtol=1e-5, atol=1e-5)
    assert np.allclose(approx.d_vv, exact.d_vv, atol=1e-4)
    assert np.allclose(approx.d_qq, exact.d_qq, atol=1e-3)


def test_sphere_jet_symmetric(sphere_free):
    q = np.array([[0.4, -0.2], [1.5, 0.7]])
    v = np.array([[1.0, 2.0], [-0.5, 0.3]])
    jet = sphere_free.jet(0.0, "N", q, v)
    assert np.allclose(jet.d_vv, np.swapaxes(jet.d_vv, 1, 2))
    assert np.allclose(jet.d_qq, np.swapaxes(jet.d_qq, 1, 2))


def test_fenchel_dual_of_mechanical_is_closed_form(mechanical):
    H = fenchel_dual(mechanical)
    assert isinstance(H, KineticPotentialHamiltonian)
    q = np.array([[0.1, 0.3]])
    p = np.array([[1.0, -2.0]])
    _, value = legendre_batch(mechanical, 0.2, "T", q, p)
    assert H.evaluate(0.2, "T", q, p)[0] == pytest.approx(value[0])
    assert H.evaluate(0.2, "T", q, p)[0] == pytest.approx(2.5 + 0.1 * (np.cos(0.2 * np.pi) + np.cos(0.6 * np.pi)))


def test_numerical_fenchel_dual_of_quartic(torus1):
    L = build_lagrangian(ModelSpec(kind="quartic"), torus1)
    H = fenchel_dual(L)
    assert isinstance(H, FenchelHamiltonian)
    p = np.array([[8.0], [-1.0], [0.5]])
    q = np.zeros((3, 1))
    # H = 3/4 |p|^(4/3)
    assert np.allclose(H.evaluate(0.0, "T", q, p), 0.75 * np.abs(p[:, 0]) ** (4.0 / 3.0), rtol=1e-8)


def test_fenchel_inequality(mechanical):
    rng = np.random.default_rng(5)
    q = rng.uniform(0, 1, (50, 2))
    v = rng.uniform(-4, 4, (50, 2))
    p = rng.uniform(-4, 4, (50, 2))
    H = fenchel_dual(mechanical)
    gap = mechanical.evaluate(0.0, "T", q, v) + H.evaluate(0.0, "T", q, p) - np.sum(p * v, axis=1)
    assert gap.min() >= -1e-12
    dual = mechanical.d_v(0.0, "T", q, v)
    tight = mechanical.evaluate(0.0, "T", q, v) + H.evaluate(0.0, "T", q, dual) - np.sum(dual * v, axis=1)
    assert np.abs(tight).max() < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0), st.floats(0.0, 1.0))
def test_legendre_round_trip(vx, vy, t):
    from app.services.geometry import build_manifold
    L = build_lagrangian(ModelSpec(kind="quartic", potential="cos2"), build_manifold("torus2"))
    v = np.array([[vx, vy]])
    assume(np.linalg.norm(v) > 0.3)
    q = np.array([[0.2, 0.7]])
    p = L.d_v(t, "T", q, v)
    back, _ = legendre_batch(L, t, "T", q, p)
    assert np.allclose(back, v, rtol=1e-8, atol=1e-8)


def test_action_integrand_mechanical(torus1):
    H = build_hamiltonian(ModelSpec(kind="mechanical", potential="cos2", epsilon=1.0), torus1)
    q = np.array([[0.0], [0.25]])
    p = np.array([[2.0], [1.0]])
    assert np.allclose(action_integrand(H, 0.0, "T", q, p), [2.0 - 1.0, 0.5 - 0.0], atol=1e-12)


def test_radial_identity(pendulum_hamiltonian):
    residual = check_radial_identity(pendulum_hamiltonian, 0.3, "T", [0.1], [1.0], np.linspace(0.1, 10.0, 20))
    assert residual < 1e-5


def test_hamiltonian_vector_field_is_symplectic_gradient(pendulum_hamiltonian):
    q = np.array([[0.13]])
    p = np.array([[0.7]])
    xh = pendulum_hamiltonian.hamiltonian_vector_field(0.0, "T", q, p)
    xi = (np.array([[0.3]]), np.array([[-1.1]]))
    _, d_q, d_p, _ = pendulum_hamiltonian.first_derivatives(0.0, "T", q, p)
    dh = d_q[0] @ xi[0][0] + d_p[0] @ xi[1][0]
    assert symplectic_form(xh, xi)[0] == pytest.approx(-dh, abs=1e-8)


def test_liouville_pairing_is_contraction(pendulum_hamiltonian):
    q = np.array([[0.4]])
    p = np.array([[1.5]])
    y = liouville_field(p)
    xh = pendulum_hamiltonian.hamiltonian_vector_field(0.0, "T", q, p)
    # omega(Y, X_H) = -omega(X_H, Y) = DH[Y]
    assert symplectic_form(y, xh)[0] == pytest.approx(
        pendulum_hamiltonian.liouville_pairing(0.0, "T", q, p)[0], rel=1e-6)


def test_completeness_autonomous(pendulum_hamiltonian):
    verdict = check_completeness_criterion(pendulum_hamiltonian)
    assert verdict.verdict == Verdict.PASS
    assert verdict.c == 0.0


def test_completeness_forced_finite(torus1):
    H = build_hamiltonian(ModelSpec(kind="mechanical", potential="cos2", epsilon=0.0, forcing=1.0), torus1)
    verdict = check_completeness_criterion(H, SampleSpec(n_radii=21, q_per_axis=4))
    assert verdict.verdict == Verdict.PASS
    assert verdict.c is not None and verdict.c > 0


def test_h1_h2_quadratic(torus1):
    H = build_hamiltonian(ModelSpec(kind="mechanical"), torus1)
    verdict = check_h1_h2(H, a=lambda s: s - 1.0, sample_spec=SampleSpec(n_radii=21))
    assert verdict.h1_verdict == Verdict.PASS


def test_h2_fails_for_norm(torus1):
    H = build_hamiltonian(ModelSpec(kind="norm"), torus1)
    verdict = check_h1_h2(H, sample_spec=SampleSpec(n_radii=21))
    assert verdict.h2_verdict == Verdict.FAIL


def test_pendulum_h2_bound(pendulum_hamiltonian):
    verdict = check_h1_h2(pendulum_hamiltonian, h=lambda s: 0.5 * s * s - 1.0, sample_spec=SampleSpec(n_radii=21))
    assert verdict.h2_verdict == Verdict.PASS


def test_expression_lagrangian_matches_builtin(torus1):
    tree = ["sum", ["prod", 0.5, ["pow", "v0", 2]], ["neg", ["cos", ["prod", 6.283185307179586, "q0"]]]]
    L = build_lagrangian(ModelSpec(kind="expression", expression=tree), torus1)
    builtin = build_lagrangian(ModelSpec(kind="mechanical", potential="cos2", epsilon=1.0), torus1)
    q = np.array([[0.1], [0.4]])
    v = np.array([[1.0], [-2.0]])
    assert np.allclose(L.evaluate(0.0, "T", q, v), builtin.evaluate(0.0, "T", q, v))
    assert np.allclose(L.d_v(0.0, "T", q, v), v, atol=1e-6)


def test_expression_rejects_unknown_operator(torus1):
    with pytest.raises(ModelConfigError):
        build_lagrangian(ModelSpec(kind="expression", expression=["tan", "v0"]), torus1)


def test_cos2_needs_a_torus(sphere):
    with pytest.raises(ModelConfigError):
        build_lagrangian(ModelSpec(kind="mechanical", potential="cos2"), sphere)
