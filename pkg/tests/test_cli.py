from __future__ import annotations

import contextlib
import io
import json

import numpy as np
import pytest

from casimir_afm import io as fio
from casimir_afm.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, exit_code_for, main
from casimir_afm.analysis import StageError
from casimir_afm.errors import ConvergenceError, InsufficientDataError, ValidationError
from casimir_afm.report import FIGURE_FILES


def cli(*args):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main([str(a) for a in args])
    return code, out.getvalue(), err.getvalue()


def config(path, doc):
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """A default simulated run carried through calibration and analysis."""
    run = tmp_path_factory.mktemp("run")
    for cmd in ("simulate", "piezo-calib", "analyze"):
        code, _, err = cli(cmd, "--run-dir", run)
        assert code == EXIT_OK, err
    return run


def test_simulate_layout(run_dir):
    names = {p.name for p in run_dir.iterdir()}
    assert {fio.trace_name(i) + ".csv" for i in range(1, 29)} <= names
    assert {"fringes.csv", "casimir_trace.csv", "casimir_trace.json", "ground_truth.json",
            "roughness_sphere.csv", "roughness_plate.csv", "piezo_calibration.json", "result.json"} <= names
    truth = json.loads((run_dir / "ground_truth.json").read_text())
    assert truth["n_traces"] == 28 and truth["seed"] == 12345


def test_analyze_result_document(run_dir):
    doc = json.loads((run_dir / "result.json").read_text())
    cal = doc["calibration"]
    assert abs(cal["V0"]["value"] + 0.337) < 0.002
    assert abs(cal["z0"]["value"] - 30.0) < 1.0
    assert doc["gates"]["v0_constant"] and doc["gates"]["z0_roughness_consistent"]
    assert doc["roughness"]["passed"]


def test_simulate_is_byte_identical(tmp_path):
    cfg = config(tmp_path / "c.json", {"simulate": {"n_traces": 3, "roughness": False, "casimir_trace": False}})
    for name in ("a", "b"):
        assert cli("simulate", "--config", cfg, "--run-dir", tmp_path / name)[0] == EXIT_OK
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert cli("simulate", "--config", cfg, "--run-dir", tmp_path / "c", "--seed", 1)[0] == EXIT_OK
    assert (tmp_path / "c" / "trace_001.csv").read_bytes() != (tmp_path / "a" / "trace_001.csv").read_bytes()


def test_invalid_configuration_exit_code(tmp_path):
    code, _, err = cli("simulate", "--config", config(tmp_path / "c.json", {"simulate": {"n_traces": 2}}),
                       "--run-dir", tmp_path / "r")
    assert code == EXIT_VALIDATION and "n_traces" in err
    assert not (tmp_path / "r").exists()


def test_piezo_calib_errors(tmp_path):
    code, _, err = cli("piezo-calib", "--run-dir", tmp_path)
    assert code == EXIT_IO and "fringes.csv" in err
    # a third of one drive period contains no complete sweep
    t = np.linspace(0.0, 10.0, 1000)
    fio.write_fringes(tmp_path / "fringes.csv", t, 3.0 * t, np.cos(t))
    code, _, err = cli("piezo-calib", "--run-dir", tmp_path)
    assert code == EXIT_VALIDATION and err.startswith("error [piezo-calib]")
    assert not (tmp_path / "piezo_calibration.json").exists()


def test_analyze_requires_piezo_calibration(tmp_path):
    code, _, err = cli("analyze", "--run-dir", tmp_path)
    assert code == EXIT_IO and "piezo-calib" in err


def test_analyze_stage_error_reports_stage(run_dir, tmp_path):
    for i in (1, 2):
        for ext in ("csv", "json"):
            name = f"trace_00{i}.{ext}"
            (tmp_path / name).write_bytes((run_dir / name).read_bytes())
    cfg = config(tmp_path / "c.json", {"analyze": {"piezo_calibration": str(run_dir / "piezo_calibration.json")}})
    code, _, err = cli("analyze", "--config", cfg, "--run-dir", tmp_path)
    assert code == EXIT_VALIDATION and "input" in err


def test_v0_ramp_fails_constancy_gate(run_dir, tmp_path):
    cfg = config(tmp_path / "c.json", {
        "simulate": {"truth": {"v0_slope_per_um": 0.01}, "roughness": False, "casimir_trace": False},
        "analyze": {"piezo_calibration": str(run_dir / "piezo_calibration.json")},
    })
    assert cli("simulate", "--config", cfg, "--run-dir", tmp_path / "r")[0] == EXIT_OK
    code, out, err = cli("analyze", "--config", cfg, "--run-dir", tmp_path / "r")
    assert code == EXIT_VALIDATION
    assert "constancy" in err and "V0 =" in out
    # results are still written for inspection
    assert json.loads((tmp_path / "r" / "result.json").read_text())["gates"]["v0_constant"] is False


def test_report_with_and_without_truth(run_dir, tmp_path):
    out_dir = tmp_path / "rep"
    cfg = config(tmp_path / "c.json", {"report": {"output_dir": str(out_dir)}})
    code, out, _ = cli("report", "--config", cfg, "--run-dir", run_dir)
    assert code == EXIT_OK
    assert all((out_dir / name).exists() for name in FIGURE_FILES)
    assert "Recovered vs true" in out and " NO" not in out
    v0_curve = fio.read_csv(out_dir / "v0_vs_separation.csv", ("separation_nm", "V0_V"))
    assert v0_curve["separation_nm"].size > 100 and np.all(np.abs(v0_curve["V0_V"] + 0.337) < 0.05)
    cfg = config(tmp_path / "d.json", {"report": {"output_dir": str(out_dir), "use_ground_truth": False}})
    code, out, _ = cli("report", "--config", cfg, "--run-dir", run_dir)
    assert code == EXIT_OK and "Recovered vs true" not in out
    assert "Recovered vs true" not in (out_dir / "report.txt").read_text()


def test_report_needs_result(tmp_path):
    code, _, err = cli("report", "--run-dir", tmp_path)
    assert code == EXIT_IO and "analyze" in err


def test_roughness_command(run_dir, tmp_path):
    out = tmp_path / "rough.json"
    cfg = config(tmp_path / "c.json", {"roughness": {"output": str(out)}})
    code, stdout, _ = cli("roughness", "--config", cfg, "--run-dir", run_dir)
    assert code == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["consistency"]["passed"] and {"sphere", "plate"} <= set(doc)
    cfg = config(tmp_path / "d.json", {"roughness": {"output": str(out), "z0": 80.0, "z0_uncertainty": 1.0}})
    code, _, err = cli("roughness", "--config", cfg, "--run-dir", run_dir)
    assert code == EXIT_VALIDATION and "dust" in err
    cfg = config(tmp_path / "e.json", {"roughness": {"z0": 30.0}})
    assert cli("roughness", "--config", cfg, "--run-dir", run_dir)[0] == EXIT_VALIDATION


def test_exit_code_mapping():
    assert exit_code_for(FileNotFoundError("x")) == EXIT_IO
    assert exit_code_for(ValidationError("x")) == EXIT_VALIDATION
    assert exit_code_for(InsufficientDataError("x")) == EXIT_VALIDATION
    assert exit_code_for(ConvergenceError("x")) == EXIT_NUMERICAL
    assert exit_code_for(FloatingPointError("x")) == EXIT_NUMERICAL
    assert exit_code_for(StageError("k'/z0 iteration", ConvergenceError("x"))) == EXIT_NUMERICAL
