"""Property suites for the invariants every stage relies on.

Each test is a hypothesis property that can be run on its own with
``pytest tests/test_properties.py``; the acceptance module calls the same
functions and counts violations.
"""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from casimir_afm.analysis import run_analysis
from casimir_afm.analysis.drift import estimate_drift
from casimir_afm.analysis.preprocess import ContactEvent, level_crossing_extension
from casimir_afm.fitting import fit_parabola, fit_parabolas
from casimir_afm.roughness import RoughnessHistogram, consistency_with_z0, summary_stats
from casimir_afm.simulator import GroundTruth, generate_electrostatic_trace, generate_fringe_record

PLATE_V = np.linspace(-0.712, -0.008, 28)

finite = dict(allow_nan=False, allow_infinity=False)


# apex affine invariance ----------------------------------------------------

@given(beta=st.floats(-5.0, -0.5), v0=st.floats(-0.6, -0.1), s0=st.floats(-1.0, 1.0),
       p=st.floats(0.1, 10.0), q=st.floats(-10.0, 10.0), seed=st.integers(0, 2 ** 32 - 1))
def test_apex_invariant_under_affine_signal_map(beta, v0, s0, p, q, seed):
    S = beta * (PLATE_V - v0) ** 2 + s0 + np.random.default_rng(seed).normal(0, 1e-3, PLATE_V.size)
    a = fit_parabola(PLATE_V, S).parameters
    b = fit_parabola(PLATE_V, p * S + q).parameters
    assert abs(b[0] - a[0]) <= 1e-12 * max(1.0, abs(a[0]))
    assert abs(b[1] - p * a[1]) <= 1e-12 * abs(p * a[1])


@given(v0=st.floats(-0.6, -0.1), a=st.floats(0.5, 4.0), c=st.floats(-1.0, 1.0), seed=st.integers(0, 2 ** 32 - 1))
def test_apex_follows_affine_voltage_map(v0, a, c, seed):
    S = -(PLATE_V - v0) ** 2 + np.random.default_rng(seed).normal(0, 1e-3, PLATE_V.size)
    base = fit_parabola(PLATE_V, S).parameters[0]
    moved = fit_parabola(a * PLATE_V + c, S).parameters[0]
    assert abs(moved - (a * base + c)) <= 1e-11 * max(1.0, abs(a * base + c))


@given(seed=st.integers(0, 2 ** 32 - 1), p=st.floats(0.1, 10.0), q=st.floats(-10.0, 10.0))
def test_batched_apex_invariant_and_matches_single_fits(seed, p, q):
    rng = np.random.default_rng(seed)
    v0 = rng.uniform(-0.6, -0.1, 6)
    S = -(PLATE_V - v0[:, None]) ** 2 + rng.normal(0, 1e-3, (6, PLATE_V.size))
    apex = fit_parabolas(PLATE_V, S)[0][:, 0]
    scaled = fit_parabolas(PLATE_V, p * S + q)[0][:, 0]
    assert np.all(np.abs(scaled - apex) <= 1e-12 * np.maximum(1.0, np.abs(apex)))
    for j in range(6):
        assert abs(apex[j] - fit_parabola(PLATE_V, S[j]).parameters[0]) <= 1e-12


# collinear contact extrapolation --------------------------------------------

@given(dW=st.floats(0.0, 1e4, **finite), h1=st.floats(0.01, 50.0), h2=st.floats(0.01, 50.0),
       slope=st.floats(1e-3, 10.0), sign=st.sampled_from([-1.0, 1.0]), sW=st.floats(-5.0, 5.0))
def test_collinear_points_extrapolate_to_Y(dW, h1, h2, slope, sign, sW):
    dX, dY = dW + h1, dW + h1 + h2
    b = sign * slope
    sX, sY = sW + b * h1, sW + b * (h1 + h2)
    if sX == sW:
        return
    d_c, degenerate = level_crossing_extension(dW, sW, dX, sX, dY, sY)
    assert not degenerate
    assert abs(d_c - dY) <= 1e-9 * max(1.0, abs(dY))


@given(dW=st.floats(0.0, 1e4), h1=st.floats(0.01, 50.0), h2=st.floats(0.01, 50.0), s=st.floats(-5.0, 5.0),
       sY=st.floats(-5.0, 5.0))
def test_flat_pre_contact_pair_uses_midpoint(dW, h1, h2, s, sY):
    d_c, degenerate = level_crossing_extension(dW, s, dW + h1, s, dW + h1 + h2, sY)
    assert degenerate and d_c == 0.5 * ((dW + h1) + (dW + h1 + h2))


# drift estimator exactness ---------------------------------------------------

def _arrow(n, m, D, delta, s):
    return [ContactEvent(i + 1, D - m * s[i] + i * delta, float(s[i]), 0, D - m * s[i] + i * delta)
            for i in range(n)]


@given(n=st.integers(12, 40), m=st.floats(1.0, 50.0), D=st.floats(1000.0, 8000.0), delta=st.floats(-1.0, 1.0),
       seed=st.integers(0, 2 ** 32 - 1))
def test_drift_estimator_exact_on_linear_drift(n, m, D, delta, seed):
    s = -np.random.default_rng(seed).uniform(0.1, 3.0, n)
    est = estimate_drift(_arrow(n, m, D, delta, s))
    assert abs(est.drift_per_interval - delta) <= 1e-10
    assert est.n_estimates >= 3


# histograms -------------------------------------------------------------------

histogram_weights = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=60).filter(lambda w: sum(w) > 1e-3)


def _histogram(weights, width, label="sphere"):
    w = np.asarray(weights)
    return RoughnessHistogram(label, width * np.arange(w.size), 100.0 * w / w.sum())


@given(weights=histogram_weights, width=st.floats(0.01, 5.0))
def test_histogram_normalised_and_moments_match_direct_sums(weights, width):
    h = _histogram(weights, width)
    assert abs(h.weights.sum() - 1.0) <= 1e-12
    s = summary_stats(h)
    x, p = h.heights.tolist(), h.percent_area.tolist()
    mean = sum(a * b for a, b in zip(x, p)) / 100.0
    var = sum((a - mean) ** 2 * b for a, b in zip(x, p)) / 100.0
    scale = max(1.0, max(x))
    assert abs(s.mean - mean) <= 1e-12 * scale
    assert abs(s.rms ** 2 - var) <= 1e-12 * scale ** 2
    assert s.max_height == max(a for a, b in zip(x, p) if b > 0)
    assert 0.0 <= s.peak_above_mean <= max(x)


@given(weights=histogram_weights, scale=st.floats(0.5, 2.0).filter(lambda c: abs(c - 1.0) > 1e-3))
def test_unnormalised_histogram_rejected(weights, scale):
    w = np.asarray(weights)
    with pytest.raises(ValueError):
        RoughnessHistogram("plate", np.arange(w.size, dtype=float), scale * 100.0 * w / w.sum())


@given(sphere=histogram_weights, plate=histogram_weights, z0=st.floats(0.0, 200.0),
       u1=st.floats(0.0, 50.0), u2=st.floats(0.0, 50.0))
def test_consistency_verdict_monotone_in_uncertainty(sphere, plate, z0, u1, u2):
    s, p = _histogram(sphere, 2.0, "sphere"), _histogram(plate, 0.1, "plate")
    lo, hi = sorted((u1, u2))
    if consistency_with_z0(s, p, z0, lo).passed:
        assert consistency_with_z0(s, p, z0, hi).passed


# determinism --------------------------------------------------------------

@settings(max_examples=8)
@given(seed=st.integers(0, 2 ** 32 - 1), V=st.floats(-0.8, 0.1), index=st.integers(1, 40))
def test_simulator_deterministic_under_fixed_seed(seed, V, index):
    truth = GroundTruth(seed=seed)
    a = generate_electrostatic_trace(truth, V, index)
    b = generate_electrostatic_trace(truth, V, index)
    assert np.array_equal(a.s_def, b.s_def) and np.array_equal(a.piezo_voltage, b.piezo_voltage)
    other = generate_electrostatic_trace(GroundTruth(seed=seed + 1), V, index)
    assert not np.array_equal(a.s_def, other.s_def)


@settings(max_examples=3)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_fringe_record_deterministic_under_fixed_seed(seed):
    truth = GroundTruth(seed=seed)
    a, b = generate_fringe_record(truth), generate_fringe_record(truth)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


@settings(max_examples=4)
@given(perm_seed=st.integers(0, 2 ** 32 - 1))
def test_analysis_invariant_under_trace_permutation(noiseless_run, perm_seed):
    order = np.random.default_rng(perm_seed).permutation(len(noiseless_run.traces))
    shuffled = [noiseless_run.traces[i] for i in order]
    r = run_analysis(shuffled, noiseless_run.piezo, noiseless_run.truth.geometry)
    assert r.calibration.to_dict() == noiseless_run.result.calibration.to_dict()
