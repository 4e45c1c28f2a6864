"""
Tests for scenario loading, expectation tables, reports and the property suite
"""

import json
from types import SimpleNamespace

import numpy as np
import pytest

from app.schemas.analysis import Certificate, CertificateStatus, SampleSpec, Verdict
from app.schemas.records import CriticalPointRecord, IndexStatus, PathRecord
from app.schemas.scenario import ScenarioConfig
from app.services.harness import (
    apply_overrides, compare_expectations, derivative_orders, list_scenarios, load_scenario, property_suite,
    run_scenario
)
from app.services.pathspace import path_from_function
from app.services.report import emit_report, render_summary

SMALL_SAMPLE = {"n_radii": 21, "n_directions": 4, "q_per_axis": 3, "t_values": [0.0, 0.5]}


def _record(action, index, degree=0, certified=True, family="f", conormal=0.0):
    cert = Certificate(status=CertificateStatus.PASS if certified else CertificateStatus.UNCERTIFIED,
                       max_speed=0.0, R=1.0, R_A=0.5, within_reachable_bound=True,
                       action_L=action, action_L0=action, action_gap=0.0)
    return CriticalPointRecord(
        family=family, degree=degree, provenance="test", action=action, gradient_norm=0.0,
        conormal_residual=conormal, max_speed=0.0, morse_index=index, large_morse_index=index,
        index_status=IndexStatus.STABLE, certificate=cert,
        path=PathRecord(manifold="torus2", N=2, charts=["T"] * 3, nodes=[[0.0, 0.0]] * 3),
    )


def _result(records):
    return SimpleNamespace(records=records, certified=[r for r in records if r.certified])


def _small_config(**extra):
    data = {
        "name": "small-torus",
        "manifold": "torus2",
        "model": {"kind": "mechanical", "potential": "cos2", "epsilon": 0.1},
        "boundary": {"kind": "periodic"},
        "families": [
            {"name": "minimum", "generator": "path_seed", "degree": 0, "point": [0.1, -0.05], "bump": 0.02},
            {"name": "sweep-q0", "generator": "torus_translation", "degree": 1, "axes": [0], "points": 8},
        ],
        "tolerances": {"minimax_window": 20},
        "expectations": {"min_certified": 2, "actions": [-0.2, 0.0], "indices": [0, 1]},
        "sample": SMALL_SAMPLE,
        "mesh": 16,
        "grid_density": 3,
    }
    data.update(extra)
    return ScenarioConfig.model_validate(data)


def test_builtin_scenarios_are_listed():
    assert {"torus-periodic", "torus-neumann", "sphere-endpoints"} <= set(list_scenarios())


def test_load_builtin_scenario():
    config = load_scenario("torus-periodic")
    assert config.manifold == "torus2"
    assert config.cuplength == 2
    assert [f.degree for f in config.families] == [0, 1, 1, 2]
    assert config.expectations.indices == [0, 1, 1, 2]


def test_load_scenario_from_path(tmp_path):
    target = tmp_path / "mine.toml"
    target.write_text('name = "mine"\nmesh = 8\n[model]\nkind = "quartic"\n')
    config = load_scenario(target)
    assert config.name == "mine" and config.mesh == 8 and config.model.kind == "quartic"


def test_unknown_scenario():
    with pytest.raises(FileNotFoundError):
        load_scenario("no-such-scenario")


def test_overrides_and_config_hash():
    config = load_scenario("sphere-endpoints")
    assert apply_overrides(config, mesh=None) is config
    assert config.config_hash() == load_scenario("sphere-endpoints").config_hash()
    coarse = apply_overrides(config, mesh=32, seed=3)
    assert coarse.mesh == 32 and coarse.seed == 3
    assert coarse.config_hash() != config.config_hash()
    # the output directory is not part of the run identity
    assert apply_overrides(config, output="/tmp/elsewhere").config_hash() == config.config_hash()


def test_compare_expectations_pass():
    config = _small_config(cuplength=1)
    records = [_record(-0.2, 0), _record(1e-9, 1, degree=1)]
    verdicts = {v.name: v.verdict for v in compare_expectations(config, _result(records), 2)}
    assert verdicts == {name: Verdict.PASS for name in
                        ("all_certified", "min_certified", "multiplicity_bound", "index_gap", "index_stable",
                         "actions", "indices")}


def test_compare_expectations_failures():
    config = _small_config(expectations={"min_certified": 2, "actions": [-0.2, 0.0], "indices": [0, 1],
                                         "strictly_increasing": True, "max_conormal": 1e-6})
    records = [_record(-0.2, 0), _record(0.0, 1, degree=1, certified=False, conormal=1e-3)]
    verdicts = {v.name: v.verdict for v in compare_expectations(config, _result(records), 2)}
    assert verdicts["all_certified"] == Verdict.FAIL
    assert verdicts["min_certified"] == Verdict.FAIL
    # uncertified solutions do not count towards actions or indices
    assert verdicts["actions"] == Verdict.FAIL
    assert verdicts["indices"] == Verdict.FAIL
    assert verdicts["strictly_increasing"] == Verdict.PASS
    assert verdicts["conormal_residual"] == Verdict.FAIL


def test_action_matching_is_a_multiset():
    config = _small_config(expectations={"actions": [0.0, 0.0]})
    one = compare_expectations(config, _result([_record(0.0, 1)]), 2)
    two = compare_expectations(config, _result([_record(0.0, 1), _record(2e-7, 1)]), 2)
    assert next(v for v in one if v.name == "actions").verdict == Verdict.FAIL
    assert next(v for v in two if v.name == "actions").verdict == Verdict.PASS


@pytest.mark.slow
def test_small_scenario_end_to_end(tmp_path):
    timings = {}
    manifest = run_scenario(_small_config(), timings=timings)
    assert manifest.passed, [e for e in manifest.expectations if e.verdict != Verdict.PASS]
    assert manifest.certified_count == 2
    assert "tonelli" in timings
    written = emit_report(manifest, tmp_path, timings=timings)
    names = {p.relative_to(tmp_path).as_posix() for p in written}
    assert {"records.jsonl", "manifest.json", "summary.md", "tables/solutions.csv", "timings.json"} <= names
    lines = (tmp_path / "records.jsonl").read_text().splitlines()
    assert len(lines) == 2 and json.loads(lines[0])["action"] == pytest.approx(-0.2)
    assert "timings" not in json.loads((tmp_path / "manifest.json").read_text())
    assert "small-torus" in render_summary(manifest)


@pytest.mark.slow
@pytest.mark.parametrize("name", ["torus-periodic", "torus-neumann", "sphere-endpoints"])
def test_builtin_scenario_passes(name):
    manifest = run_scenario(name)
    assert manifest.passed, [e for e in manifest.expectations if e.verdict != Verdict.PASS]


@pytest.mark.slow
def test_property_suite_flags_a_bad_psi():
    sample = SampleSpec(**SMALL_SAMPLE)
    verdicts = property_suite(psi_profile=lambda s: (-s, -np.ones_like(s), np.zeros_like(s)), sample_spec=sample)
    by_name = {v.name: v.verdict for v in verdicts}
    assert by_name["legendre_roundtrip"] == Verdict.PASS
    assert by_name["radial_identity"] == Verdict.PASS
    assert by_name["modification:mechanical_torus:R=5"] == Verdict.PASS
    assert by_name["custom_psi:mechanical_torus:a"] == Verdict.FAIL
    assert all(by_name[f"holder_bound:{name}"] == Verdict.PASS
               for name in ("mechanical_torus", "quartic_torus", "free_sphere"))


def test_derivative_orders_on_a_torus_path(torus2, mechanical):
    def curve(t):
        return np.stack([0.2 + 0.1 * np.sin(2 * np.pi * t), 0.3 + 0.2 * t], axis=1)

    path = path_from_function(torus2, curve, 16)
    first, second = derivative_orders(mechanical, path, np.random.default_rng(0))
    assert first > 1.5
    assert second > 1.5


@pytest.mark.slow
def test_repeated_runs_write_identical_outputs(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    for out in (first, second):
        emit_report(run_scenario("torus-periodic", seed=7), out, timings={})
    names = ["records.jsonl", "manifest.json", "tables/solutions.csv", "tables/family_max.csv", "tables/speeds.csv"]
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
    assert json.loads((first / "manifest.json").read_text())["seed"] == 7
