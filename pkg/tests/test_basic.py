"""
Basic tests for the tonellicrit command line
"""

import json
import logging
import sys

import pytest

from app.core.logging import setup_logging
from app.schemas.records import CriticalPointRecord, PathRecord
from main import build_parser, main

TINY_CONFIG = """
name = "tiny"
manifold = "torus2"
mesh = 8
grid_density = 3

[model]
kind = "mechanical"
potential = "cos2"
epsilon = 0.1

[boundary]
kind = "periodic"
"""


COMMAND_ARGV = {
    "check-lagrangian": ["--config", "x"],
    "modify": ["--config", "x", "--R", "1"],
    "flow": ["--config", "x", "--q", "0", "--v", "0"],
    "estimate-ra": ["--config", "x", "--A", "1"],
    "solve": ["--config", "x"],
    "index": ["--config", "x", "--records", "r"],
    "scenario": ["x"],
    "suite": [],
}


def _lines(capsys):
    return [json.loads(line) for line in capsys.readouterr().out.splitlines() if line.strip()]


@pytest.mark.parametrize("command", sorted(COMMAND_ARGV))
def test_parser_registers_command(command):
    """Every command group is registered"""
    args = build_parser().parse_args([command] + COMMAND_ARGV[command])
    assert callable(args.handler)


def test_missing_command_exits():
    """A subcommand is required"""
    with pytest.raises(SystemExit):
        main([])


def test_flow_command(capsys):
    """Flow prints one JSON state per sample with constant energy"""
    code = main(["flow", "--config", "torus-periodic", "--q", "0.1", "0.2", "--v", "0.5", "0.0", "--samples", "3"])
    assert code == 0
    rows = _lines(capsys)
    assert len(rows) == 3
    assert rows[0]["chart"] == "T"
    assert abs(rows[0]["energy"] - rows[-1]["energy"]) < 1e-7


def test_check_lagrangian_command(capsys):
    """The Tonelli report of the torus scenario passes"""
    assert main(["check-lagrangian", "--config", "torus-periodic"]) == 0
    report = _lines(capsys)[0]
    assert report["l1_verdict"] == "pass"
    assert report["l2_verdict"] == "pass"


def test_unknown_config_exit_code():
    """Unknown scenarios are configuration errors"""
    assert main(["check-lagrangian", "--config", "no-such-scenario"]) == 2


def test_library_errors_exit_code(tmp_path):
    """Library errors map to exit code 2"""
    config = tmp_path / "quartic.toml"
    config.write_text(TINY_CONFIG.replace('kind = "mechanical"', 'kind = "quartic"'))
    assert main(["modify", "--config", str(config), "--R", "2", "--hamiltonian"]) == 2


def test_index_command(tmp_path, capsys):
    """Stored records get their Morse index recomputed"""
    config = tmp_path / "tiny.toml"
    config.write_text(TINY_CONFIG)
    record = CriticalPointRecord(
        family="sweep-torus", degree=2, provenance="stored", action=0.2, gradient_norm=0.0,
        conormal_residual=0.0, max_speed=0.0,
        path=PathRecord(manifold="torus2", N=8, charts=["T"] * 9, nodes=[[0.5, 0.5]] * 9),
    )
    records = tmp_path / "records.jsonl"
    records.write_text(record.model_dump_json() + "\n")
    assert main(["index", "--config", str(config), "--records", str(records)]) == 0
    row = _lines(capsys)[0]
    assert (row["morse_index"], row["large_morse_index"]) == (2, 2)
    assert row["index_status"] == "stable"


def test_logging_goes_to_stderr():
    """Logs stay off stdout, which carries the JSON records"""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    try:
        setup_logging("warning")
        assert root.level == logging.WARNING
        assert [h.stream for h in root.handlers if isinstance(h, logging.StreamHandler)][0] is sys.stderr
    finally:
        root.handlers[:] = handlers
        root.setLevel(level)


if __name__ == "__main__":
    pytest.main([__file__])
