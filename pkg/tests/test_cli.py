import json
import os

import pytest
from click.testing import CliRunner
from scripts.cli import cli


def invoke(*args):
    return CliRunner().invoke(cli, [str(a) for a in args])


def read_report(path):
    with open(path) as f:
        return json.load(f)


def test_check_kernel_passes(config_file, tmp_path):
    result = invoke("check-kernel", "-c", config_file, "-o", tmp_path)
    assert result.exit_code == 0, result.output
    report = read_report(tmp_path / "check_kernel.json")
    assert report["kind"] == "check-kernel"
    assert report["body"]["passed"]
    assert report["body"]["decay"] > 0.0


def test_check_kernel_assumption_failure(config_file, tmp_path):
    result = invoke(
        "check-kernel", "-c", config_file, "-o", tmp_path,
        "--set", "Kernel.preset=asymmetric-unit", "--alpha", 1.0, "--dim", 2,
    )
    assert result.exit_code == 2
    # the report is written before the failure is raised
    report = read_report(tmp_path / "check_kernel.json")
    assert not report["body"]["passed"]
    assert "decay" not in report["body"]


@pytest.mark.parametrize(
    "args",
    [
        ("--set", "Parameters.alpha=3"),
        ("--set", "Kernel.preset=unknown"),
        ("--beta", 0.0),
        ("--set", "Forcing.seeds=[]"),
    ],
)
def test_configuration_errors(config_file, tmp_path, args):
    result = invoke("check-kernel", "-c", config_file, "-o", tmp_path, *args)
    assert result.exit_code == 4


def test_missing_config_file(tmp_path):
    result = invoke("check-kernel", "-c", tmp_path / "absent.yaml", "-o", tmp_path)
    assert result.exit_code == 4


def test_solve_const(config_file, tmp_path):
    result = invoke("solve-const", "-c", config_file, "-o", tmp_path, "--all-forcings")
    assert result.exit_code == 0, result.output
    report = read_report(tmp_path / "solve-const" / "solve_const.json")
    assert [s["forcing_index"] for s in report["body"]["solutions"]] == [0, 1]
    assert os.path.isdir(tmp_path / "solve-const" / "forcing-1")


def test_verify_and_report(config_file, tmp_path):
    result = invoke("verify", "-c", config_file, "-o", tmp_path, "-k", "heat-kernel", "-k", "fourier-mode")
    assert result.exit_code == 0, result.output
    report = read_report(tmp_path / "verify.json")
    names = [c["criterion"] for c in report["body"]["criteria"]]
    assert names == ["heat-kernel", "fourier-mode"]

    result = invoke("report", "-o", tmp_path)
    assert result.exit_code == 0, result.output
    assert "heat-kernel" in result.output
    assert os.path.isfile(tmp_path / "summary.csv")


def test_verify_rejects_unknown_criterion(config_file, tmp_path):
    result = invoke("verify", "-c", config_file, "-o", tmp_path, "-k", "everything")
    assert result.exit_code != 0
    assert not os.path.exists(tmp_path / "verify.json")


def test_report_on_empty_directory(tmp_path):
    result = invoke("report", "-o", tmp_path)
    assert result.exit_code == 4
