"""
Tests for descent, Newton refinement, minimax, Morse indices, dedupe and the pipeline
"""

import numpy as np
import pytest

from app.core.errors import SpeedCapBreach, StageError
from app.schemas.records import IndexStatus
from app.schemas.scenario import ToleranceSpec
from app.services.families import path_seed, torus_translation
from app.services.geometry import ChartPoint
from app.services.pathspace import FixedEndpoints, Periodic, action, constant_path, gradient, path_from_function
from app.services.solver import (
    CriticalPoint, _Stage, dedupe, descend, inertia, make_record, minimax, minimize, minimize_with_safeguard,
    morse_index, refine_newton, solve_pipeline
)


def _constant(manifold, q, N=16):
    return constant_path(manifold, ChartPoint("T", q), N)


@pytest.mark.parametrize("diag, expected", [
    ([1.0, 2.0, 3.0], (0, 0)),
    ([-2.0, 0.0, 3.0], (1, 2)),
    ([-1.0, -1.0, 0.0, 0.0], (2, 4)),
    ([-5.0, 1e-12, 4.0], (1, 2)),
])
def test_inertia_of_diagonal(diag, expected):
    assert inertia(np.diag(diag)) == expected


def test_inertia_of_rotated_indefinite():
    rng = np.random.default_rng(2)
    Q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    H = Q @ np.diag([-3.0, -1.0, 0.0, 2.0, 5.0, 7.0]) @ Q.T
    assert inertia(H) == (2, 3)


def test_minimize_finds_the_torus_minimum(torus2, mechanical):
    seed = path_seed(torus2, Periodic(), [0.1, -0.05], 0.02, N=16).members[0]
    record = minimize(mechanical, Periodic(), seed)
    assert record.action == pytest.approx(-0.2, abs=1e-9)
    assert record.gradient_norm < 1e-10
    assert record.max_speed < 1e-6


def test_descent_lowers_the_action(torus2, mechanical):
    seed = path_seed(torus2, Periodic(), [0.2, 0.1], 0.05, N=16).members[0]
    path, iterations = descend(mechanical, Periodic(), seed, tol=1e-2)
    assert iterations > 0
    assert action(mechanical, path) < action(mechanical, seed)
    assert gradient(mechanical, path, Periodic()).dual_norm < 1e-2


def test_descent_speed_cap(torus2, mechanical):
    seed = path_seed(torus2, Periodic(), [0.2, 0.1], 0.05, N=16).members[0]
    with pytest.raises(SpeedCapBreach) as info:
        descend(mechanical, Periodic(), seed, speed_cap=1e-6)
    assert info.value.cap == 1e-6


def test_safeguard_without_breach(torus2, mechanical):
    seed = path_seed(torus2, Periodic(), [0.1, 0.1], 0.02, N=16).members[0]
    path, L0 = minimize_with_safeguard(mechanical, Periodic(), seed, speed_cap=100.0)
    assert L0 is None
    assert action(mechanical, path) == pytest.approx(-0.2, abs=1e-9)


def test_safeguard_restarts_on_a_modification(torus2, free_particle, small_sample):
    # the seed winds once around q0, so no path in its class gets below speed 1.2
    bc = FixedEndpoints(ChartPoint("T", [0.0, 0.0]), ChartPoint("T", [0.2, 0.0]))
    seed = path_from_function(torus2, lambda t: np.stack([1.2 * t, 0.05 * np.sin(np.pi * t)], axis=1), 16)
    path, L0 = minimize_with_safeguard(free_particle, bc, seed, speed_cap=0.5, sample_spec=small_sample)
    assert L0 is not None
    assert L0.R == 0.5
    assert gradient(L0, path, bc).dual_norm < 1e-8
    assert np.allclose(path.speeds(), 1.2, atol=1e-6)


def test_newton_refines_to_the_minimum(torus2, mechanical):
    start = _constant(torus2, [0.02, 0.97])
    path = refine_newton(mechanical, Periodic(), start)
    assert path.c0_distance(_constant(torus2, [0.0, 0.0])) < 1e-8


@pytest.mark.parametrize("q, expected", [
    ([0.0, 0.0], (0, 0)),
    ([0.5, 0.0], (1, 1)),
    ([0.0, 0.5], (1, 1)),
    ([0.5, 0.5], (2, 2)),
])
def test_morse_index_of_constant_loops(torus2, mechanical, q, expected):
    m, m_star, status = morse_index(mechanical, Periodic(), _constant(torus2, q))
    assert (m, m_star) == expected
    assert status == IndexStatus.STABLE


def test_morse_index_without_refinement(torus2, mechanical):
    *_, status = morse_index(mechanical, Periodic(), _constant(torus2, [0.5, 0.5]), check_refined=False)
    assert status == IndexStatus.NOT_COMPUTED


def test_free_particle_constant_loop_is_degenerate(torus2, free_particle):
    # translations give a two-dimensional kernel
    m, m_star, _ = morse_index(free_particle, Periodic(), _constant(torus2, [0.3, 0.3]), check_refined=False)
    assert (m, m_star) == (0, 2)


def test_dedupe_keeps_one_per_cluster(torus2, mechanical):
    bc = Periodic()
    points = [
        _constant(torus2, [0.0, 0.0]),
        _constant(torus2, [1e-7, 0.0]),
        _constant(torus2, [0.5, 0.0]),
        _constant(torus2, [0.0, 0.5]),
    ]
    records = [make_record(mechanical, bc, CriticalPoint(p, f"f{i}", 0, "minimum")) for i, p in enumerate(points)]
    kept = dedupe(records, torus2)
    assert len(kept) == 3
    assert kept[0].action == pytest.approx(-0.2)
    # equal actions at distinct loops both survive
    assert sorted(r.family for r in kept[1:]) == ["f2", "f3"]


def test_minimax_on_a_circle_family(torus2, mechanical):
    family = torus_translation(torus2, 1, [0], 0.25, 8, N=8)
    opts = ToleranceSpec(minimax_window=20, minimax_max_rounds=2000)
    result, path = minimax(mechanical, Periodic(), family, opts)
    assert result.degree == 1
    assert result.level == pytest.approx(0.0, abs=1e-9)
    assert result.family_max_log[0] == pytest.approx(0.1)
    assert result.family_max_log[-1] <= result.family_max_log[0]
    assert result.converged
    assert path.c0_distance(_constant(torus2, [0.5, 0.0], N=8)) < 1e-6
    m, m_star, _ = morse_index(mechanical, Periodic(), path)
    assert m <= 1 <= m_star


def test_stage_wraps_failures():
    timings = {}
    with pytest.raises(StageError) as info:
        with _Stage("bounds", timings):
            raise ValueError("boom")
    assert info.value.stage == "bounds"
    assert isinstance(info.value.cause, ValueError)
    assert "bounds" in timings


def test_pipeline_needs_families(mechanical):
    with pytest.raises(StageError):
        solve_pipeline(mechanical, Periodic(), [])


@pytest.mark.slow
def test_pipeline_on_the_torus(torus2, mechanical, small_sample):
    bc = Periodic()
    families = [
        path_seed(torus2, bc, [0.1, -0.05], 0.02, N=16, name="minimum"),
        torus_translation(torus2, 1, [0], 0.25, 8, N=16, name="sweep-q0"),
    ]
    opts = ToleranceSpec(minimax_window=20)
    result = solve_pipeline(mechanical, bc, families, opts, small_sample, grid_density=3)
    actions = sorted(r.action for r in result.records)
    assert actions == pytest.approx([-0.2, 0.0], abs=1e-8)
    assert len(result.certified) == 2
    assert result.R > result.reachable.R_A
    assert {"tonelli", "bounds", "modification", "dedupe"} <= set(result.timings)
    assert result.minimax[0].record is not None
