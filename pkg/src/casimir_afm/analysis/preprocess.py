"""
Per-trace preprocessing: approach-branch extraction, scattered-light
background removal and contact location.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateFitError, InsufficientDataError, NoContactError
from ..fitting import fit_line, fit_parabolas
from ..piezo import PiezoCalibration, extension_from_voltage, split_branches
from ..simulator import Trace

logger = logging.getLogger(__name__)

MIN_BASELINE_SAMPLES = 100


@dataclass
class Approach:
    """Approach branch of one trace in physical coordinates."""

    plate_voltage: float
    sequence_index: int
    d: np.ndarray        # piezo extension, nm (increasing)
    s: np.ndarray        # deflection signal
    kind: str = "electrostatic"

    def replace_signal(self, s) -> "Approach":
        return Approach(self.plate_voltage, self.sequence_index, self.d, np.asarray(s, float), self.kind)


@dataclass
class ScatteredLight:
    slope: float
    offset: float
    n_samples: int
    slope_error: float = float("nan")


@dataclass
class ContactEvent:
    trace_index: int
    d_c: float
    s_def_at_contact: float
    index_Y: int
    d_level: float                      # level-crossing estimate from W, X and Y alone
    points: dict = field(default_factory=dict)   # d and s of W, X, Y
    outside_bracket: bool = False       # d_level outside [d_X, d_Y]
    degenerate: bool = False            # s_W == s_X, midpoint of X and Y used
    method: str = "intersect"

    def shifted(self, dd: float) -> "ContactEvent":
        return ContactEvent(self.trace_index, self.d_c - dd, self.s_def_at_contact, self.index_Y,
                            self.d_level - dd, dict(self.points), self.outside_bracket, self.degenerate,
                            self.method)


def extract_approach(trace: Trace, piezo: PiezoCalibration) -> Approach:
    """Rising branch of ``trace`` with voltages converted to extension."""
    rising, _ = split_branches(trace.piezo_voltage)
    d = extension_from_voltage(piezo, trace.piezo_voltage[rising], "rising")
    return Approach(trace.plate_voltage, trace.sequence_index, d, trace.s_def[rising].astype(float), trace.kind)


def noise_scale(s) -> float:
    """Robust white-noise sigma from second differences (insensitive to smooth trends)."""
    s = np.asarray(s, dtype=float)
    if s.size < 5:
        raise InsufficientDataError("need at least five samples to estimate noise")
    d2 = np.diff(s, 2)
    mad = np.median(np.abs(d2 - np.median(d2)))
    return float(1.4826 * mad / np.sqrt(6.0))


def coarse_contact_index(s) -> int:
    """Approximate contact sample: the foot of the in-contact ramp.

    In contact the signal climbs steeply to its maximum at full extension.
    The index returned is the last sample, before the ramp reaches half its
    height, that still lies within 5% of the ramp height above the far
    baseline.  This needs no pre-contact attraction, so it also works on
    fully compensated approaches.
    """
    s = np.asarray(s, dtype=float)
    base = float(np.median(s[: max(s.size // 20, 5)]))
    height = float(s.max()) - base
    if not height > 0:
        return int(np.argmin(s))
    i_half = int(np.argmax(s >= base + 0.5 * height))
    low = np.nonzero(s[: i_half + 1] <= base + 0.05 * height)[0]
    return int(low[-1]) if low.size else i_half


def far_region(approach: Approach, contact_index: int | None = None, fraction: float = 0.2) -> slice:
    """The farthest ``fraction`` of the pre-contact samples."""
    if contact_index is None:
        contact_index = coarse_contact_index(approach.s)
    return slice(0, int(fraction * contact_index))


def fit_far_line(approach: Approach, region: slice | None = None) -> ScatteredLight:
    region = far_region(approach) if region is None else region
    d, s = approach.d[region], approach.s[region]
    if d.size < MIN_BASELINE_SAMPLES:
        raise InsufficientDataError(f"far region has {d.size} samples; need {MIN_BASELINE_SAMPLES}")
    res = fit_line(d, s)
    return ScatteredLight(float(res.parameters[0]), float(res.parameters[1]), d.size, float(res.errors[0]))


def subtract_scattered_light(approach: Approach, background: ScatteredLight | None = None):
    """Remove a background linear in extension.

    With ``background=None`` the line is fitted to the far region of this
    trace.  Returns ``(corrected_approach, background)``.
    """
    if background is None:
        background = fit_far_line(approach)
    s = approach.s - (background.slope * approach.d + background.offset)
    return approach.replace_signal(s), background


def estimate_common_background(approaches) -> ScatteredLight:
    """Background shared by a voltage sequence.

    Far-region line fits of individual traces also contain the long-range
    electrostatic tail, which scales as (V - V0)^2.  Fitting each line
    parameter across traces with a parabola in plate voltage and taking the
    apex value leaves only the voltage-independent background.
    """
    approaches = list(approaches)
    V = np.array([a.plate_voltage for a in approaches])
    lines = [fit_far_line(a) for a in approaches]
    slopes = np.array([ln.slope for ln in lines])
    offsets = np.array([ln.offset for ln in lines])
    if np.unique(V).size < 3:
        raise InsufficientDataError("common background needs at least three plate voltages")
    params, cov, _ = fit_parabolas(V, np.vstack([slopes, offsets]))
    n = int(sum(ln.n_samples for ln in lines))
    return ScatteredLight(float(params[0, 2]), float(params[1, 2]), n, float(np.sqrt(cov[0, 2, 2])))


def _intersect(d1, s1, slope1, d2, s2, slope2):
    """Intersection of two lines in the (d, s) plane given point and slope."""
    if slope1 == slope2:
        raise DegenerateFitError("parallel lines")
    d = (s2 - s1 + slope1 * d1 - slope2 * d2) / (slope1 - slope2)
    return d, s1 + slope1 * (d - d1)


def level_crossing_extension(dW, sW, dX, sX, dY, sY):
    """Extension where the W-X line reaches the deflection level of Y.

    Returns ``(d_C, degenerate)``; for ``s_W == s_X`` the midpoint of X and Y
    is returned with ``degenerate=True``.
    """
    if sW == sX:
        return 0.5 * (dX + dY), True
    return dX - (dW - dX) * (sX - sY) / (sW - sX), False


def locate_contact(approach: Approach, method: str = "intersect", threshold_factor: float = 10.0,
                   sustain: int = 3, post_samples: int = 20, noise: float | None = None) -> ContactEvent:
    """Find where the sphere touches the plate during an approach.

    Contact is the first sample after which the deflection rises faster than
    ``threshold_factor`` times the pre-contact noise for ``sustain``
    consecutive samples.  W and X are the last two samples before contact, Y
    the first sample on the in-contact line.

    ``method="level"`` places contact where the W-X line reaches the level of
    Y.  ``method="intersect"`` (default) instead intersects the W-X line with
    the line fitted to the first ``post_samples`` in-contact samples, which
    stays on the contact line when the post-contact rise per sample is not
    small compared with the pre-contact fall.  Both estimates are kept.
    """
    if method not in ("intersect", "level"):
        raise ValueError(f"unknown contact method {method!r}")
    d, s = approach.d, approach.s
    n = s.size
    coarse = coarse_contact_index(s)
    far = s[: max(int(0.2 * coarse), 5)]
    sigma = noise_scale(far) if noise is None else float(noise)
    threshold = max(threshold_factor * sigma, 1e-6 * float(np.ptp(s)))

    rise = np.diff(s) > threshold
    run = rise.copy()
    for k in range(1, sustain):
        run[:-k] &= rise[k:]
        run[-k:] = False
    run[:2] = False              # W and X must exist before the turning sample
    start = np.nonzero(run)[0]
    if start.size == 0:
        raise NoContactError(f"no contact found in trace {approach.sequence_index}")
    i = int(start[0])            # turning sample: s[i] < s[i+1]
    if i + 1 + post_samples > n:
        post_samples = n - i - 1
    if post_samples < 2:
        raise NoContactError(f"contact too close to the end of trace {approach.sequence_index}")

    post = slice(i + 1, i + 1 + post_samples)
    line = fit_line(d[post], s[post])
    slope_c, icpt_c = line.parameters
    tol = max(4.0 * max(line.residual_rms, sigma), 1e-9 * float(np.ptp(s)))
    iY = i if abs(s[i] - (slope_c * d[i] + icpt_c)) <= tol else i + 1
    iX, iW = iY - 1, iY - 2
    if iW < 0:
        raise NoContactError(f"contact at the start of trace {approach.sequence_index}")

    dW, dX, dY = d[iW], d[iX], d[iY]
    sW, sX, sY = s[iW], s[iX], s[iY]
    d_level, degenerate = level_crossing_extension(dW, sW, dX, sX, dY, sY)
    outside = not (min(dX, dY) <= d_level <= max(dX, dY))
    if outside:
        logger.debug("trace %d: contact estimate %.3f nm outside [%.3f, %.3f]",
                       approach.sequence_index, d_level, dX, dY)
    points = {"d_W": dW, "s_W": sW, "d_X": dX, "s_X": sX, "d_Y": dY, "s_Y": sY}

    if method == "level":
        d_c, s_c = d_level, sY
    elif degenerate:
        d_c, s_c = dY, sY
    else:
        slope_wx = (sX - sW) / (dX - dW)
        try:
            d_c, s_c = _intersect(dX, sX, slope_wx, dY, slope_c * dY + icpt_c, slope_c)
        except DegenerateFitError:
            d_c, s_c = dY, sY
    return ContactEvent(approach.sequence_index, float(d_c), float(s_c), iY, float(d_level),
                        {k: float(v) for k, v in points.items()}, outside, degenerate, method)
