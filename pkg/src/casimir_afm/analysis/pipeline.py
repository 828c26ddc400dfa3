"""
End-to-end calibration chain over one experiment run.

Order: background removal, contact location, drift correction, m, parabola
samples, V0 aggregation and constancy gate, k'/z0 iteration, Casimir force
by both methods.  Each stage failure is re-raised as :class:`StageError`
naming the stage.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import CasimirAFMError, InsufficientDataError
from ..physics import SphereGeometry
from ..piezo import PiezoCalibration
from ..simulator import Trace
from . import calibrate, casimir, drift, parabola, preprocess

logger = logging.getLogger(__name__)


class StageError(CasimirAFMError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class AnalysisConfig:
    background: str = "common"          # "common" across the sequence, or "per-trace"
    far_fraction: float = 0.2
    contact_method: str = "intersect"   # or "level"
    contact_threshold: float = 10.0
    contact_sustain: int = 3
    contact_post_samples: int = 20
    drift_sets: int = 5
    apply_drift: bool = True
    z_min: float = 60.0
    z_max: float = 6000.0
    grid_spacing: float | None = None
    interpolation: str = "cubic"
    v0_z_range: tuple = (0.0, 2500.0)
    v0_sigma: float = 2.0
    z0_guess: float = 30.0
    scan_starts: tuple = calibrate.DEFAULT_STARTS
    scan_end: float = 2500.0
    rel_tol_k: float = 1e-4
    tol_z0: float = 0.1
    max_cycles: int = 50
    accelerate: bool = True
    casimir_range: tuple = (100.0, 500.0)

    def __post_init__(self):
        if self.background not in ("common", "per-trace"):
            raise ValueError(f"unknown background mode {self.background!r}")
        if self.contact_method not in ("intersect", "level"):
            raise ValueError(f"unknown contact method {self.contact_method!r}")
        if self.interpolation not in ("cubic", "linear"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        if not 0.0 < self.far_fraction < 1.0:
            raise ValueError("far_fraction must lie in (0, 1)")


@dataclass
class AnalysisResult:
    calibration: calibrate.CalibrationResult
    approaches: list
    background: preprocess.ScatteredLight
    contacts: list
    corrected_contacts: list
    drift: drift.DriftEstimate
    m_estimate: drift.MEstimate
    m_uncorrected: drift.MEstimate
    contact_extensions: dict
    samples: parabola.ParabolaSamples
    v0: parabola.V0Aggregate
    casimir_offset: casimir.ForceCurve
    compensated: casimir.ForceCurve | None = None
    comparison: casimir.CasimirComparison | None = None
    compensated_approach: preprocess.Approach | None = None
    compensated_contact: preprocess.ContactEvent | None = None
    gates: dict = field(default_factory=dict)


def _stage(name):
    def wrap(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except (CasimirAFMError, ValueError, ArithmeticError, KeyError) as exc:
            raise StageError(name, exc) from exc
    return wrap


def run_analysis(traces, piezo: PiezoCalibration, geom: SphereGeometry, config: AnalysisConfig | None = None,
                 compensated_trace: Trace | None = None) -> AnalysisResult:
    """Run the full calibration chain.

    ``traces`` are the electrostatic approaches in any order; measurement
    order comes from ``sequence_index``.
    """
    cfg = config or AnalysisConfig()
    traces = sorted(traces, key=lambda t: t.sequence_index)
    if len(traces) < 3:
        raise StageError("input", InsufficientDataError("need at least three electrostatic traces"))

    approaches = _stage("approach extraction")(lambda: [preprocess.extract_approach(t, piezo) for t in traces])
    if cfg.background == "common":
        bg = _stage("scattered light")(preprocess.estimate_common_background, approaches)
        approaches = [preprocess.subtract_scattered_light(a, bg)[0] for a in approaches]
    else:
        pairs = _stage("scattered light")(lambda: [preprocess.subtract_scattered_light(a) for a in approaches])
        approaches = [p[0] for p in pairs]
        bg = preprocess.ScatteredLight(float(np.mean([p[1].slope for p in pairs])),
                                       float(np.mean([p[1].offset for p in pairs])),
                                       int(sum(p[1].n_samples for p in pairs)))

    def locate(a):
        return preprocess.locate_contact(a, method=cfg.contact_method, threshold_factor=cfg.contact_threshold,
                                         sustain=cfg.contact_sustain, post_samples=cfg.contact_post_samples)

    contacts = _stage("contact location")(lambda: [locate(a) for a in approaches])
    n_flag = sum(c.outside_bracket for c in contacts)
    if n_flag:
        logger.info("%d of %d level-crossing contact estimates fall outside [d_X, d_Y]", n_flag, len(contacts))

    m_raw = _stage("deflection coefficient")(drift.extract_m, contacts)
    if cfg.apply_drift:
        dr = _stage("drift estimation")(drift.estimate_drift, contacts, n_sets=cfg.drift_sets)
    else:
        dr = drift.DriftEstimate(0.0, 0, 0.0, np.array([]), [])
    corrected = drift.correct_contacts(contacts, dr)
    m_est = _stage("deflection coefficient")(drift.extract_m, corrected)
    refs = drift.contact_reference(contacts, m_est, dr.drift_per_interval)

    samples = _stage("parabola samples")(
        parabola.build_parabola_samples, approaches, contacts, m_est.m, refs, z_min=cfg.z_min,
        z_max=cfg.z_max, spacing=cfg.grid_spacing, interpolation=cfg.interpolation)
    v0 = _stage("V0 aggregation")(parabola.aggregate_V0, samples, z_range=cfg.v0_z_range, n_sigma=cfg.v0_sigma)

    cal = _stage("k'/z0 iteration")(
        calibrate.iterate_k_z0, samples, m_est.m, geom, cfg.z0_guess, starts=cfg.scan_starts,
        end=cfg.scan_end, rel_tol_k=cfg.rel_tol_k, tol_z0=cfg.tol_z0, max_cycles=cfg.max_cycles,
        accelerate=cfg.accelerate)
    cal.V0 = calibrate.Measured(v0.V0, v0.uncertainty)
    cal.m = calibrate.Measured(m_est.m, m_est.uncertainty)
    rel_m = m_est.uncertainty / m_est.m if m_est.m else 0.0
    rel_k = cal.k_prime.uncertainty / cal.k_prime.value
    cal.k = calibrate.Measured(cal.k_prime.value / (m_est.m * 1e-9), cal.k_prime.value / (m_est.m * 1e-9)
                               * float(np.hypot(rel_m, rel_k)))
    cal.drift = calibrate.Measured(dr.drift_per_interval, dr.uncertainty if dr.n_estimates > 1 else 0.0)
    cal.v0_vs_z = list(zip(samples.z_grid.tolist(), samples.V0.tolist()))
    cal.v0_constant = v0.constant

    offset = casimir.extract_casimir(samples, cal.k_prime.value, cal.z0.value)
    result = AnalysisResult(cal, approaches, bg, contacts, corrected, dr, m_est, m_raw, refs, samples, v0, offset)
    result.gates["v0_constant"] = v0.constant
    result.gates["k_prime_scan_random"] = not cal.trends["k_prime"].significant
    result.gates["z0_scan_random"] = not cal.trends["z0"].significant

    if compensated_trace is not None:
        a = _stage("compensated trace")(preprocess.extract_approach, compensated_trace, piezo)
        a = preprocess.subtract_scattered_light(a, bg)[0]
        c = _stage("compensated trace")(locate, a)
        comp = casimir.compensated_force(a, c, m_est.m, cal.k_prime.value, cal.z0.value)
        cmp_ = _stage("method comparison")(casimir.compare_casimir_methods, offset, comp, z_range=cfg.casimir_range)
        result.compensated, result.comparison = comp, cmp_
        result.compensated_approach, result.compensated_contact = a, c
        result.gates["casimir_methods_agree"] = cmp_.agree
    logger.info("V0=%.5f V, m=%.5f nm/signal, k'=%.6g N/signal, z0=%.3f nm",
                cal.V0.value, cal.m.value, cal.k_prime.value, cal.z0.value)
    return result
