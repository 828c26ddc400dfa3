"""
Casimir force from the parabola offsets and from a compensated approach.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from ..errors import InsufficientDataError, ValidationError
from ..fitting import fit_nonlinear
from .parabola import ParabolaSamples
from .preprocess import Approach, ContactEvent, noise_scale


@dataclass
class ForceCurve:
    z: np.ndarray          # separation, nm
    F: np.ndarray          # force, N
    sigma: np.ndarray      # one-standard-deviation uncertainty, N

    def window(self, lo: float, hi: float) -> "ForceCurve":
        sel = (self.z >= lo) & (self.z <= hi)
        return ForceCurve(self.z[sel], self.F[sel], self.sigma[sel])


@dataclass
class CasimirComparison:
    z: np.ndarray
    F_offset: np.ndarray
    F_compensated: np.ndarray
    difference: np.ndarray
    sigma_combined: np.ndarray
    fraction_within: float
    agree: bool
    z_range: tuple


def extract_casimir(samples: ParabolaSamples, k_prime: float, z0: float) -> ForceCurve:
    """Parabola-offset force ``F = S0 k'`` at ``z = z_p + z0``."""
    if not k_prime > 0:
        raise ValidationError("k' must be positive")
    return ForceCurve(samples.z_grid + z0, samples.S0 * k_prime, samples.S0_uncertainty * k_prime)


def compensated_force(approach: Approach, contact: ContactEvent, m: float, k_prime: float, z0: float,
                      contact_extension: float | None = None, noise: float | None = None) -> ForceCurve:
    """Force along an approach taken with the plate at V0.

    The zero-deflection contact extension defaults to the contact point of
    this trace projected along the contact line.
    """
    D = contact.d_c - m * contact.s_def_at_contact if contact_extension is None else contact_extension
    pre = slice(0, contact.index_Y)
    s = approach.s[pre]
    z = D - approach.d[pre] + m * s + z0
    if noise is None:
        coarse = max(int(0.2 * s.size), 5)
        noise = noise_scale(s[:coarse])
    order = np.argsort(z)
    return ForceCurve(z[order], s[order] * k_prime, np.full(s.size, noise * k_prime))


def compare_casimir_methods(offset: ForceCurve, compensated: ForceCurve, z_range=(100.0, 500.0),
                            n_sigma: float = 2.0, min_fraction: float = 0.95,
                            atol: float = 1e-15) -> CasimirComparison:
    """Compare the two force extractions on the offset-method grid.

    The compensated curve is interpolated onto the offset grid inside
    ``z_range``.  The methods agree when ``|dF| <= n_sigma * sigma + atol``
    holds at no less than ``min_fraction`` of the grid points; ``atol`` (N)
    only matters for noiseless data.
    """
    lo = max(z_range[0], offset.z.min(), compensated.z.min())
    hi = min(z_range[1], offset.z.max(), compensated.z.max())
    if hi <= lo:
        raise InsufficientDataError("force curves do not overlap inside the comparison range")
    off = offset.window(lo, hi)
    if off.z.size < 2:
        raise InsufficientDataError("too few offset-method points inside the comparison range")
    zc, keep = np.unique(compensated.z, return_index=True)
    Fc = CubicSpline(zc, compensated.F[keep])(off.z)
    sc = np.interp(off.z, zc, compensated.sigma[keep])
    diff = off.F - Fc
    sigma = np.sqrt(off.sigma ** 2 + sc ** 2)
    within = np.abs(diff) <= n_sigma * sigma + atol
    frac = float(within.mean())
    return CasimirComparison(off.z, off.F, Fc, diff, sigma, frac, frac >= min_fraction, (lo, hi))


def loglog_slope(curve: ForceCurve, lo: float = 100.0, hi: float = 300.0) -> float:
    """Power-law exponent of ``F`` against ``z`` inside ``[lo, hi]``.

    The exponent comes from a least-squares fit of ``F = A (z / z_ref)^p`` in
    force space, which stays unbiased when noise is comparable to ``|F|``
    (a straight line through ``log|F|`` does not).  The starting point is the
    log-log line through the samples above twice their uncertainty.
    """
    c = curve.window(lo, hi)
    if c.z.size < 2:
        raise InsufficientDataError("need at least two points for a log-log slope")
    strong = np.abs(c.F) > 2.0 * c.sigma
    seed = strong if strong.sum() >= 2 else np.abs(c.F) > 0
    if seed.sum() < 2:
        raise InsufficientDataError("force is zero throughout the window")
    p_log, a_log = np.polyfit(np.log(c.z[seed]), np.log(np.abs(c.F[seed])), 1)
    if c.z.size < 3:
        return float(p_log)
    z_ref = float(np.sqrt(lo * hi))
    scale = float(np.max(np.abs(c.F[seed])))
    sign = float(np.sign(np.median(c.F[seed])))

    def model(z, q):
        return q[0] * (z / z_ref) ** q[1]

    A0 = sign * np.exp(a_log) * z_ref ** p_log / scale
    res = fit_nonlinear(model, [A0, p_log], c.z, c.F / scale, x_scale=[abs(A0), 1.0])
    return float(res.parameters[1]) if res.converged else float(p_log)
