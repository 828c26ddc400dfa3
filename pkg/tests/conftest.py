from __future__ import annotations

import logging
import time

import pytest
from hypothesis import HealthCheck, settings

from casimir_afm.analysis import run_analysis
from casimir_afm.piezo import PiezoCalibration, calibrate_piezo
from casimir_afm.simulator import (
    GroundTruth,
    generate_casimir_trace,
    generate_fringe_record,
    generate_voltage_sequence,
)

settings.register_profile("repo", derandomize=True, deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

ACCEPTANCE_LINES: list = []


def record_acceptance(label: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{label} {'PASS' if passed else 'FAIL'}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.ERROR, logger="casimir_afm")


class Run:
    """A simulated experiment together with its analysis."""

    def __init__(self, truth, piezo, traces, casimir_trace, result, elapsed):
        self.truth = truth
        self.piezo = piezo
        self.traces = traces
        self.casimir_trace = casimir_trace
        self.result = result
        self.elapsed = elapsed


def _run(truth: GroundTruth, fit_piezo: bool) -> Run:
    t0 = time.perf_counter()
    piezo = calibrate_piezo(*generate_fringe_record(truth)) if fit_piezo else PiezoCalibration.from_K(truth.piezo_K)
    traces = generate_voltage_sequence(truth)
    comp = generate_casimir_trace(truth)
    result = run_analysis(traces, piezo, truth.geometry, compensated_trace=comp)
    return Run(truth, piezo, traces, comp, result, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def reference_run() -> Run:
    """Default-noise round trip with the piezo calibrated from its fringe record."""
    return _run(GroundTruth(), fit_piezo=True)


@pytest.fixture(scope="session")
def noiseless_run() -> Run:
    """Noise-free traces analysed with the exact piezo coefficients."""
    return _run(GroundTruth(noise_sigma=0.0), fit_piezo=False)
