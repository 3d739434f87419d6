import json
from pathlib import Path

import pytest

from mffbsde.cli import (EXIT_CONDITIONS, EXIT_INVALID, EXIT_OK, ConfigError, run,
                         substream_seed, validate_config)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _files(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_solve_fbsde_writes_outputs(tmp_path):
    out = tmp_path / "run"
    assert run(["solve-fbsde", "--config", str(CONFIGS / "zero_fbsde.json"), "--out", str(out)]) \
        == EXIT_OK
    assert set(_files(out)) == {"solution.csv", "diagnostics.json", "report.json",
                                "manifest.json"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_code"] == 0 and manifest["command"] == "solve-fbsde"
    assert manifest["files"][-1] == "manifest.json"


def test_rerun_is_byte_identical(tmp_path):
    args = ["solve-fbsde", "--config", str(CONFIGS / "zero_fbsde.json"), "--seed", "3"]
    run(args + ["--out", str(tmp_path / "a")])
    run(args + ["--out", str(tmp_path / "b")])
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_threads_do_not_change_results(tmp_path):
    args = ["solve-sde", "--config", str(CONFIGS / "linear_sde.json")]
    run(args + ["--out", str(tmp_path / "a")])
    run(args + ["--threads", "4", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "solution.csv").read_bytes() == \
        (tmp_path / "b" / "solution.csv").read_bytes()


@pytest.mark.parametrize("name,command", [("linear_bsde.json", "solve-bsde"),
                                          ("flq_desk.json", "lq-forward"),
                                          ("blq_desk.json", "lq-backward")])
def test_shipped_configs_run(tmp_path, name, command):
    assert run([command, "--config", str(CONFIGS / name), "--out", str(tmp_path)]) == EXIT_OK


def test_bad_config_exits_two(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": "mffbsde-run-v1", "grid": {"t0": 0, "T": 1, "N": -1}}))
    assert run(["solve-fbsde", "--config", str(bad), "--out", str(tmp_path / "o")]) \
        == EXIT_INVALID
    assert "config error" in capsys.readouterr().err


def test_missing_and_malformed_files(tmp_path):
    assert run(["solve-fbsde", "--config", str(tmp_path / "none.json"),
                "--out", str(tmp_path)]) == EXIT_INVALID
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert run(["solve-fbsde", "--config", str(broken), "--out", str(tmp_path)]) == EXIT_INVALID


def test_unknown_command_exits_two():
    assert run(["frobnicate"]) == EXIT_INVALID


def test_strict_condition_failure_exits_four(tmp_path):
    cfg = str(CONFIGS / "scalar_example_violation.json")
    assert run(["verify-conditions", "--config", cfg, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert run(["verify-conditions", "--config", cfg, "--strict",
                "--out", str(tmp_path / "b")]) == EXIT_CONDITIONS
    report = json.loads((tmp_path / "b" / "report.json").read_text())
    assert report["pass"] is False


def test_report_command(tmp_path, capsys):
    run(["solve-fbsde", "--config", str(CONFIGS / "zero_fbsde.json"), "--out", str(tmp_path)])
    capsys.readouterr()
    assert run(["report", "--out", str(tmp_path)]) == EXIT_OK
    assert "solve-fbsde" in capsys.readouterr().out
    assert run(["report", "--out", str(tmp_path / "missing")]) == EXIT_INVALID


def test_substream_seeds():
    assert substream_seed(5, "noise") == substream_seed(5, "noise")
    assert substream_seed(5, "noise") != substream_seed(5, "probe")
    assert substream_seed(5, "noise") != substream_seed(6, "noise")


def test_dimension_error_names_field():
    raw = {"schema": "mffbsde-run-v1", "grid": {"t0": 0.0, "T": 1.0, "N": 2},
           "coefficients": {"linear": {"n": 1, "psi": {"matrix": [[1.0, 0.0], [0.0, 1.0]]}}},
           "weights": {"mu": 0.5}}
    with pytest.raises(ConfigError) as info:
        validate_config(raw)
    assert any("coefficients.linear.psi.matrix" in e for e in info.value.errors)


def test_seed_range_checked(tmp_path):
    assert run(["solve-fbsde", "--config", str(CONFIGS / "zero_fbsde.json"), "--seed", "-1",
                "--out", str(tmp_path)]) == EXIT_INVALID
