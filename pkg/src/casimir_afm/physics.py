"""
Physical formulas for the sphere-plate AFM geometry.

Units are fixed across the package: separations and extensions in nm, the
sphere radius in micrometres, voltages in V, forces in N.  Attractive forces
and deflections carry a negative sign.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import constants as _const

from .errors import DomainError, NumericalError

EPSILON_0 = 8.8541878128e-12  # F/m, CODATA 2018
HBAR_C = _const.hbar * _const.c  # J m
LASER_WAVELENGTH_NM = 632.8
HALF_WAVELENGTH_NM = LASER_WAVELENGTH_NM / 2.0

# A_0 .. A_7 of the perturbative sphere-plate expansion in t = z/R.
ELECTROSTATIC_COEFFS = (0.5, -1.18260, 22.2375, -571.366, 9592.45, -90200.5, 383084.0, -300357.0)


@dataclass(frozen=True)
class PhysicalConstants:
    epsilon0: float = EPSILON_0
    hbar_c: float = HBAR_C
    laser_wavelength: float = LASER_WAVELENGTH_NM


@dataclass(frozen=True)
class SphereGeometry:
    """Sphere radius (um) and its one-sigma uncertainty (um)."""

    radius_um: float
    radius_uncertainty_um: float = 0.0

    def __post_init__(self):
        if not self.radius_um > 0:
            raise DomainError(f"sphere radius must be positive, got {self.radius_um}")
        if self.radius_uncertainty_um < 0:
            raise DomainError("radius uncertainty must be non-negative")

    @property
    def radius_nm(self) -> float:
        return self.radius_um * 1e3


@dataclass(frozen=True)
class SeparationState:
    z_piezo: float
    s_def: float
    m: float
    z0: float

    @property
    def z(self) -> float:
        return separation(self.z_piezo, self.s_def, self.m, self.z0)


def separation(z_piezo, s_def, m, z0):
    """Sphere-plate separation z = z_piezo + s_def * m + z0 (nm).

    Works element-wise on arrays.  A negative ``s_def`` (attraction) reduces
    the separation.  Callers are responsible for rejecting z <= 0.
    """
    return z_piezo + s_def * m + z0


def _ratio(z, geom: SphereGeometry):
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise DomainError("separation must be positive")
    return z / geom.radius_nm


def electrostatic_X(z, geom: SphereGeometry):
    """Force per squared voltage difference (N/V^2) from the 8-term expansion.

    ``X(z) = -2 pi eps0 sum_m A_m t**(m-1)`` with ``t = z/R``.
    """
    t = _ratio(z, geom)
    acc = np.zeros_like(t)
    for a in reversed(ELECTROSTATIC_COEFFS):
        acc = acc * t + a
    out = -2.0 * np.pi * EPSILON_0 * acc / t
    return out if out.ndim else float(out)


def electrostatic_force(z, V, V0, geom: SphereGeometry):
    """Electrostatic force X(z) * (V - V0)^2 in N."""
    dv = np.asarray(V, dtype=float) - V0
    out = electrostatic_X(z, geom) * dv * dv
    return out if np.ndim(out) else float(out)


def _exact_series(t: float, rtol: float, max_terms: int, block: int = 512) -> float:
    alpha = np.arccosh(1.0 + t)
    coth_a = 1.0 / np.tanh(alpha)
    total = 0.0
    start = 1
    while start <= max_terms:
        n = np.arange(start, min(start + block, max_terms + 1), dtype=float)
        na = n * alpha
        # sinh overflows past ~710; those terms are zero to double precision anyway
        with np.errstate(over="ignore"):
            terms = (coth_a - n / np.tanh(na)) / np.sinh(na)
        terms = np.where(np.isfinite(terms), terms, 0.0)
        partial = total + np.cumsum(terms)
        # terms are monotone in magnitude past the first few; stop at the first small one
        small = np.nonzero((np.abs(terms) < rtol * np.abs(partial)) & (n > 2))[0]
        if small.size:
            return float(partial[small[0]])
        total = float(partial[-1])
        start += block
    raise NumericalError(f"image-charge series did not converge in {max_terms} terms (z/R={t:g})")


def exact_sphere_plate_X(z, geom: SphereGeometry, rtol: float = 1e-12, max_terms: int = 1_000_000):
    """Exact sphere-plate X(z) from the image-charge capacitance series.

    ``X = 2 pi eps0 sum_{n>=1} [coth a - n coth(n a)] / sinh(n a)`` with
    ``cosh a = 1 + z/R``.  The sum is negative, matching the sign of
    :func:`electrostatic_X`.
    """
    t = _ratio(z, geom)
    flat = np.array([_exact_series(float(ti), rtol, max_terms) for ti in np.ravel(t)])
    out = 2.0 * np.pi * EPSILON_0 * flat.reshape(t.shape)
    return out if out.ndim else float(out)


def casimir_pfa_ideal(z, geom: SphereGeometry):
    """Ideal-metal sphere-plate Casimir force in the proximity force approximation (N)."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise DomainError("separation must be positive")
    z_m = z * 1e-9
    out = -(np.pi ** 3 / 360.0) * HBAR_C * (geom.radius_um * 1e-6) / z_m ** 3
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class InterferenceParams:
    """Parameters of the fibre interferometer intensity model.

    ``K`` holds K0..K4 so that the piezo extension at drive voltage Vp is
    ``(K0 + K1 Vp + ... + K4 Vp^4) * Vp`` nm.  ``delta`` is in nm and ``gamma``
    in 1/V.
    """

    I0: float = 0.0
    I1: float = 1.0
    gamma: float = 0.0
    delta: float = 0.0
    K: tuple = field(default=(0.0, 0.0, 0.0, 0.0, 0.0))


def expansion_coefficient(Vp, K):
    """K_v = K0 + K1 Vp + ... + K4 Vp^4."""
    Vp = np.asarray(Vp, dtype=float)
    acc = np.zeros_like(Vp)
    for k in reversed(tuple(K)):
        acc = acc * Vp + k
    return acc


def piezo_extension(Vp, K):
    """Piezo extension K_v(Vp) * Vp in nm."""
    out = expansion_coefficient(Vp, K) * np.asarray(Vp, dtype=float)
    return out if np.ndim(out) else float(out)


def interference_intensity(Vp, params: InterferenceParams, wavelength: float = LASER_WAVELENGTH_NM):
    Vp = np.asarray(Vp, dtype=float)
    ext = expansion_coefficient(Vp, params.K) * Vp
    phase = 4.0 * np.pi * (ext + params.delta) / wavelength
    out = params.I0 + 0.5 * params.I1 * (1.0 - params.gamma * Vp) * (1.0 + np.cos(phase))
    return out if out.ndim else float(out)
