"""
Tests for Euler-Lagrange and Hamiltonian flows, reachable-set estimates and certificates
"""

import numpy as np
import pytest

from app.schemas.analysis import CertificateStatus
from app.schemas.scenario import ModelSpec
from app.services.dynamics import (
    FlowState, action_identity_residual, certify_solution, estimate_R_A, estimate_R_A_hamiltonian,
    hamiltonian_integrate, integrate
)
from app.services.geometry import ChartPoint
from app.services.models import build_lagrangian
from app.services.pathspace import path_from_function


def test_free_particle_flow_wraps(torus2, free_particle):
    state = FlowState(0.0, ChartPoint("T", [0.9, 0.5]), np.array([0.3, 0.1]))
    traj = integrate(free_particle, state, (0.0, 1.0))
    assert np.allclose(traj.q[-1], [0.2, 0.6], atol=1e-10)
    assert np.allclose(traj.x[-1], [0.3, 0.1])
    assert np.ptp(traj.invariant) < 1e-12


def test_pendulum_energy_is_conserved(torus1):
    L = build_lagrangian(ModelSpec(kind="mechanical", potential="cos2", epsilon=1.0), torus1)
    traj = integrate(L, FlowState(0.0, ChartPoint("T", [0.1]), np.array([0.5])), (0.0, 1.0), n_out=21)
    assert np.ptp(traj.invariant) < 1e-7


def test_lagrangian_and_hamiltonian_flows_agree(torus1, pendulum_hamiltonian):
    L = build_lagrangian(ModelSpec(kind="mechanical", potential="cos2", epsilon=1.0), torus1)
    point = ChartPoint("T", [0.1])
    el = integrate(L, FlowState(0.0, point, np.array([0.5])), (0.0, 1.0))
    ham = hamiltonian_integrate(pendulum_hamiltonian, FlowState(0.0, point, np.array([0.5]), covariant=True),
                                (0.0, 1.0))
    assert np.allclose(el.q, ham.q, atol=1e-6)
    assert np.allclose(el.x, ham.x, atol=1e-6)
    assert ham.covariant and not el.covariant


def test_backward_flow_returns_to_start(torus1, pendulum_hamiltonian):
    start = FlowState(0.0, ChartPoint("T", [0.3]), np.array([1.2]), covariant=True)
    forward = hamiltonian_integrate(pendulum_hamiltonian, start, (0.0, 1.0))
    back = hamiltonian_integrate(pendulum_hamiltonian, forward.state(), (1.0, 0.0))
    assert np.allclose(back.q[-1], [0.3], atol=1e-7)
    assert np.allclose(back.x[-1], [1.2], atol=1e-7)


def test_sphere_geodesic_switches_charts(sphere, sphere_free):
    # unit speed at the chart center, where the metric is 4 I
    state = FlowState(0.0, ChartPoint("N", [0.0, 0.0]), np.array([0.5, 0.0]))
    traj = integrate(sphere_free, state, (0.0, 3.0), n_out=7)
    assert "S" in traj.charts
    end = traj.state()
    assert sphere.distance("N", [[0.0, 0.0]], end.point.chart, end.point.coords[None])[0] == pytest.approx(3.0, abs=1e-6)
    assert sphere.norm_many(np.array([end.point.chart], dtype=object), end.point.coords[None],
                            end.fiber[None])[0] == pytest.approx(1.0, abs=1e-7)


def test_action_identity_on_pendulum_orbit(pendulum_hamiltonian):
    state = FlowState(0.0, ChartPoint("T", [0.2]), np.array([1.0]), covariant=True)
    a_h, integral = action_identity_residual(pendulum_hamiltonian, state)
    assert a_h == pytest.approx(integral, abs=1e-3)


def test_free_particle_reachable_bound(free_particle):
    estimate = estimate_R_A(free_particle, A=2.0, C1=0.5, grid_density=3)
    assert estimate.seed_radius == pytest.approx(2.5)
    assert estimate.max_norm == pytest.approx(2.5, abs=1e-9)
    assert estimate.R_A == pytest.approx(3.0, abs=1e-8)
    assert estimate.side == "lagrangian"


def test_pendulum_momentum_bound(pendulum_hamiltonian):
    estimate = estimate_R_A_hamiltonian(pendulum_hamiltonian, A=1.0, a=lambda s: s - 1.5, grid_density=3)
    assert estimate.seed_radius == pytest.approx(2.5)
    # energy conservation caps |p| at sqrt(2.5^2 + 4)
    assert 2.5 - 1e-9 <= estimate.max_norm <= np.sqrt(2.5 ** 2 + 4.0) + 1e-6
    assert estimate.R_A >= estimate.seed_radius
    assert estimate.side == "hamiltonian"


def test_certificate_pass_and_uncertified(torus2, free_particle):
    path = path_from_function(torus2, lambda t: np.stack([0.3 * t, 0.4 * t]), 8)
    ok = certify_solution(free_particle, free_particle, path, R=1.0, R_A=0.8, A=1.0)
    assert ok.status == CertificateStatus.PASS
    assert ok.max_speed == pytest.approx(0.5)
    assert ok.within_reachable_bound and ok.within_action_bound
    assert ok.witness_segment is None
    bad = certify_solution(free_particle, free_particle, path, R=0.4, R_A=0.3)
    assert bad.status == CertificateStatus.UNCERTIFIED
    assert bad.witness_segment is not None
    assert not bad.within_reachable_bound


def test_certificate_needs_speed_below_the_reachable_bound(torus2, free_particle):
    # R_A < max speed < R
    path = path_from_function(torus2, lambda t: np.stack([0.3 * t, 0.4 * t]), 8)
    cert = certify_solution(free_particle, free_particle, path, R=1.0, R_A=0.3)
    assert cert.status == CertificateStatus.UNCERTIFIED
    assert not cert.within_reachable_bound
    assert cert.witness_segment is not None
    # R_A must itself stay below R
    assert certify_solution(free_particle, free_particle, path, R=0.6, R_A=0.7).status == CertificateStatus.UNCERTIFIED


def test_certificate_needs_action_below_A(torus2, free_particle):
    path = path_from_function(torus2, lambda t: np.stack([0.3 * t, 0.4 * t]), 8)
    cert = certify_solution(free_particle, free_particle, path, R=1.0, R_A=0.8, A=0.1)
    assert cert.action_L0 == pytest.approx(0.125)
    assert cert.status == CertificateStatus.UNCERTIFIED
    assert cert.within_reachable_bound and not cert.within_action_bound
    assert cert.witness_segment is not None
