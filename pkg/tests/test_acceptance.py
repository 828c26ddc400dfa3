"""Acceptance criteria, one test each, at their stated tolerances.

Every test records a one-line verdict that is printed in the
"acceptance criteria" section of the pytest terminal summary.
"""
from __future__ import annotations

import time

import numpy as np
import pytest

from conftest import record_acceptance
from casimir_afm.analysis.calibrate import iterate_k_z0
from casimir_afm.analysis.casimir import loglog_slope
from casimir_afm.physics import SphereGeometry, electrostatic_X, exact_sphere_plate_X, piezo_extension
from casimir_afm.piezo import calibrate_piezo
from casimir_afm.simulator import GroundTruth, generate_fringe_record

import test_properties as props


def verdict(label, checks, detail):
    """Record ``label`` as passed when every entry of ``checks`` holds, then assert."""
    passed = all(bool(v) for v in checks.values())
    failed = [k for k, v in checks.items() if not v]
    record_acceptance(label, passed, detail + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert passed, f"{label}: {failed} ({detail})"


def test_ac1_perturbative_expansion_accuracy():
    geom = SphereGeometry(100.0)
    t0 = time.perf_counter()
    rel = {z: abs(float(electrostatic_X(z, geom)) / float(exact_sphere_plate_X(z, geom)) - 1.0)
           for z in (1500.0, 5000.0)}
    elapsed = time.perf_counter() - t0
    verdict("AC1 perturbative X accuracy", {
        "error at 1.5 um <= 1e-4": rel[1500.0] <= 1e-4,
        "error at 5.0 um <= 1e-4": rel[5000.0] <= 1e-4,
        "runtime < 1 s": elapsed < 1.0,
    }, f"relative error {rel[1500.0]:.3g} at 1.5 um, {rel[5000.0]:.3g} at 5.0 um; {elapsed:.3f} s")


def test_ac2_piezo_round_trip():
    truth = GroundTruth()
    assert truth.fringe_snr == 100.0
    wave = truth.wave
    assert (wave.n_samples, wave.frequency_hz) == (32768, 0.02)
    t0 = time.perf_counter()
    cal = calibrate_piezo(*generate_fringe_record(truth))
    elapsed = time.perf_counter() - t0
    sweep = np.linspace(wave.v_min, wave.v_max, 4001)
    rms = {}
    for b in ("rising", "falling"):
        err = piezo_extension(sweep, cal[b].K) - piezo_extension(sweep, truth.piezo_K[b])
        rms[b] = float(np.sqrt(np.mean(err ** 2)))
    span = float(piezo_extension(wave.v_max, truth.piezo_K["rising"]))
    verdict("AC2 piezo round trip", {
        "rising rms < 1 nm": rms["rising"] < 1.0,
        "falling rms < 1 nm": rms["falling"] < 1.0,
        "runtime < 30 s": elapsed < 30.0,
    }, f"extension rms {rms['rising']:.3g} nm rising, {rms['falling']:.3g} nm falling over {span:.0f} nm; "
       f"{elapsed:.2f} s")


def test_ac3_v0_recovery(reference_run):
    r, truth = reference_run.result, reference_run.truth
    V = sorted(t.plate_voltage for t in reference_run.traces)
    assert len(V) == 28 and V[0] == -0.712 and V[-1] == pytest.approx(-0.008)
    err = r.calibration.V0.value - truth.V0_true
    verdict("AC3 V0 recovery", {
        "|V0 - truth| <= 0.002 V": abs(err) <= 0.002,
        "constancy gate": r.gates["v0_constant"],
        "runtime < 60 s": reference_run.elapsed < 60.0,
    }, f"V0 = {r.calibration.V0.value:.5f} +/- {r.calibration.V0.uncertainty:.2g} V "
       f"(error {err:+.2g} V); slope {r.v0.slope:.2g} +/- {r.v0.slope_error:.2g} V/nm; "
       f"{reference_run.elapsed:.1f} s end to end")


def test_ac4_drift_correction(reference_run, noiseless_run):
    m_true = reference_run.truth.m_true
    raw_noisy = reference_run.result.m_uncorrected.m / m_true - 1.0
    raw_quiet = noiseless_run.result.m_uncorrected.m / m_true - 1.0
    fixed_noisy = reference_run.result.calibration.m.value / m_true - 1.0
    fixed_quiet = noiseless_run.result.calibration.m.value / m_true - 1.0
    verdict("AC4 drift correction", {
        "uncorrected bias about 0.4% (noiseless)": round(abs(raw_quiet) * 100, 1) == 0.4,
        "uncorrected bias about 0.4% (noisy)": round(abs(raw_noisy) * 100, 1) == 0.4,
        "corrected noiseless within 0.05%": abs(fixed_quiet) <= 5e-4,
        "corrected noisy within 0.5%": abs(fixed_noisy) <= 5e-3,
    }, f"uncorrected m error {100 * raw_quiet:+.3f}% noiseless, {100 * raw_noisy:+.3f}% noisy; "
       f"corrected {100 * fixed_quiet:+.2g}% noiseless, {100 * fixed_noisy:+.2g}% noisy")


def test_ac5_iterative_k_z0(reference_run, noiseless_run):
    truth = reference_run.truth
    noisy, quiet = reference_run.result, noiseless_run.result
    kp_noisy = noisy.calibration.k_prime.value / truth.k_prime - 1.0
    z0_noisy = noisy.calibration.z0.value - truth.z0_true
    kp_quiet = quiet.calibration.k_prime.value / truth.k_prime - 1.0
    z0_quiet = quiet.calibration.z0.value / truth.z0_true - 1.0
    trends = noisy.calibration.trends
    injected = iterate_k_z0(noisy.samples, noisy.m_estimate.m, truth.geometry, truth.z0_true,
                            fixed_z0=truth.z0_true + 5.0).trends["k_prime"]

    def ratio(tr):
        return abs(tr.slope) / tr.slope_error if tr.slope_error > 0 else 0.0

    verdict("AC5 iterative k'/z0", {
        "k' within 1% (noisy)": abs(kp_noisy) <= 0.01,
        "z0 within 1 nm (noisy)": abs(z0_noisy) <= 1.0,
        "k' within 1e-6 (noiseless)": abs(kp_quiet) <= 1e-6,
        "z0 within 1e-6 (noiseless)": abs(z0_quiet) <= 1e-6,
        "k' scan slope < 2 sigma": ratio(trends["k_prime"]) < 2.0,
        "z0 scan slope < 2 sigma": ratio(trends["z0"]) < 2.0,
        "5 nm z0 error trips diagnostic": injected.significant,
    }, f"k' {100 * kp_noisy:+.3f}%, z0 {z0_noisy:+.3f} nm (noisy); k' {kp_quiet:+.1e}, z0 {z0_quiet:+.1e} "
       f"(noiseless); scan slopes {ratio(trends['k_prime']):.2f} and {ratio(trends['z0']):.2f} sigma; "
       f"+5 nm injection {ratio(injected):.1f} sigma")


def test_ac6_casimir_methods_agree(reference_run):
    r = reference_run.result
    cmp_ = r.comparison
    slopes = {"offset": loglog_slope(r.casimir_offset), "compensated": loglog_slope(r.compensated)}
    verdict("AC6 dual-method Casimir", {
        "range is [100, 500] nm": tuple(cmp_.z_range) == (100.0, 500.0),
        ">= 95% of points within 2 sigma": cmp_.fraction_within >= 0.95,
        "offset slope -3 +/- 0.1": abs(slopes["offset"] + 3.0) <= 0.1,
        "compensated slope -3 +/- 0.1": abs(slopes["compensated"] + 3.0) <= 0.1,
    }, f"{100 * cmp_.fraction_within:.1f}% of {cmp_.z.size} points within 2 sigma; log-log slopes "
       f"{slopes['offset']:.3f} (offset), {slopes['compensated']:.3f} (compensated)")


PROPERTY_SUITES = {
    "apex affine invariance": (props.test_apex_invariant_under_affine_signal_map,
                               props.test_apex_follows_affine_voltage_map,
                               props.test_batched_apex_invariant_and_matches_single_fits),
    "collinear contact extrapolation": (props.test_collinear_points_extrapolate_to_Y,
                                        props.test_flat_pre_contact_pair_uses_midpoint),
    "drift exactness": (props.test_drift_estimator_exact_on_linear_drift,),
    "histogram normalisation and monotone verdict": (props.test_histogram_normalised_and_moments_match_direct_sums,
                                                     props.test_unnormalised_histogram_rejected,
                                                     props.test_consistency_verdict_monotone_in_uncertainty),
    "determinism": (props.test_simulator_deterministic_under_fixed_seed,
                    props.test_fringe_record_deterministic_under_fixed_seed,
                    props.test_analysis_invariant_under_trace_permutation),
}


def test_ac7_property_suites(noiseless_run):
    violations = {}
    for suite, tests in PROPERTY_SUITES.items():
        count = 0
        for fn in tests:
            kwargs = {"noiseless_run": noiseless_run} if fn is props.test_analysis_invariant_under_trace_permutation \
                else {}
            try:
                fn(**kwargs)
            except Exception:  # noqa: BLE001  any failing example counts as a violation
                count += 1
        violations[suite] = count
    total = sum(violations.values())
    verdict("AC7 property suites", {f"{k}: zero violations": v == 0 for k, v in violations.items()},
            f"{sum(len(t) for t in PROPERTY_SUITES.values())} properties in {len(PROPERTY_SUITES)} suites, "
            f"{total} violations")
