"""
Cross-trace parabola fits at fixed separation.

Every approach is resampled onto a common grid of provisional separations
``z_p = D_k - d + m s`` (contact separation not yet known, so ``z = z_p + z0``)
and, at each grid value, the deflection across plate voltages is fitted with
``S = beta (V - V0)^2 + S0``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from ..errors import InsufficientDataError
from ..fitting import fit_line, fit_parabolas
from .preprocess import Approach, ContactEvent

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParabolaSample:
    z_grid_value: float
    V0: float
    V0_uncertainty: float
    beta: float
    S0: float


@dataclass
class ParabolaSamples:
    """Column-oriented parabola results along the provisional z grid."""

    z_grid: np.ndarray
    V0: np.ndarray
    V0_uncertainty: np.ndarray
    beta: np.ndarray
    beta_uncertainty: np.ndarray
    S0: np.ndarray
    S0_uncertainty: np.ndarray
    plate_voltages: np.ndarray = None
    signals: np.ndarray = None      # (n_grid, n_traces) resampled deflections

    def __len__(self):
        return self.z_grid.size

    def __getitem__(self, i) -> ParabolaSample:
        return ParabolaSample(float(self.z_grid[i]), float(self.V0[i]), float(self.V0_uncertainty[i]),
                              float(self.beta[i]), float(self.S0[i]))

    def select(self, mask) -> "ParabolaSamples":
        sig = None if self.signals is None else self.signals[mask]
        return ParabolaSamples(self.z_grid[mask], self.V0[mask], self.V0_uncertainty[mask], self.beta[mask],
                               self.beta_uncertainty[mask], self.S0[mask], self.S0_uncertainty[mask],
                               self.plate_voltages, sig)


@dataclass
class V0Aggregate:
    V0: float
    uncertainty: float           # standard error of the mean
    scatter: float               # standard deviation over the grid
    slope: float                 # V per nm from the constancy line fit
    slope_error: float
    constant: bool


def provisional_separation(approach: Approach, contact_extension: float, m: float) -> np.ndarray:
    """``z - z0`` for every sample of ``approach``."""
    return contact_extension - approach.d + m * approach.s


def _resample(z, s, grid, kind):
    order = np.argsort(z, kind="stable")
    z, s = z[order], s[order]
    keep = np.concatenate([[True], np.diff(z) > 0])
    z, s = z[keep], s[keep]
    if kind == "linear":
        return np.interp(grid, z, s)
    return CubicSpline(z, s, extrapolate=False)(grid)


def build_parabola_samples(approaches, contacts, m: float, contact_extensions: dict,
                           z_min: float = 60.0, z_max: float = 6000.0, spacing: float | None = None,
                           interpolation: str = "cubic") -> ParabolaSamples:
    """Resample every approach onto a shared provisional-z grid and fit parabolas.

    Parameters
    ----------
    approaches : sequence of Approach
        Background-subtracted approach branches.
    contacts : sequence of ContactEvent
        Contact of each approach; only samples before Y are used.
    m : float
        Deflection coefficient, nm per signal unit.
    contact_extensions : dict
        Zero-deflection contact extension per trace index, drift included.
    spacing : float, optional
        Grid step in nm; defaults to the median provisional-z sample spacing.
    interpolation : {"cubic", "linear"}

    Grid values not covered by every trace are dropped.
    """
    approaches = list(approaches)
    if len(approaches) < 5:
        raise InsufficientDataError("parabola fits need at least five traces")
    if interpolation not in ("cubic", "linear"):
        raise ValueError(f"unknown interpolation {interpolation!r}")
    by_contact = {c.trace_index: c for c in contacts}
    zs, ss = [], []
    for a in approaches:
        c: ContactEvent = by_contact[a.sequence_index]
        pre = slice(0, c.index_Y)
        zs.append(provisional_separation(a, contact_extensions[a.sequence_index], m)[pre])
        ss.append(a.s[pre])
    if spacing is None:
        spacing = float(np.median(np.concatenate([np.abs(np.diff(z)) for z in zs])))
    lo = max(z_min, max(z.min() for z in zs))
    hi = min(z_max, min(z.max() for z in zs))
    if hi <= lo:
        raise InsufficientDataError("traces share no separation range")
    grid = lo + spacing * np.arange(int(np.floor((hi - lo) / spacing)) + 1)
    S = np.column_stack([_resample(z, s, grid, interpolation) for z, s in zip(zs, ss)])
    ok = np.all(np.isfinite(S), axis=1)
    grid, S = grid[ok], S[ok]
    V = np.array([a.plate_voltage for a in approaches])
    params, cov, _ = fit_parabolas(V, S)
    err = np.sqrt(np.clip(np.diagonal(cov, axis1=1, axis2=2), 0.0, None))
    logger.info("parabola grid: %d points from %.1f to %.1f nm", grid.size, grid[0], grid[-1])
    return ParabolaSamples(grid, params[:, 0], err[:, 0], params[:, 1], err[:, 1], params[:, 2], err[:, 2], V, S)


def aggregate_V0(samples: ParabolaSamples, z_range=(0.0, 2500.0), n_blocks: int = 60,
                 n_sigma: float = 2.0, resolution: float = 1e-9) -> V0Aggregate:
    """Mean V0 over the grid and the constancy gate.

    Only grid values with provisional separation inside ``z_range`` enter.
    Beyond a few microns the curvature is so weak that the apex estimator
    ``-b / 2a`` picks up a bias of order ``(V0 - mean V)(sigma_a / a)^2``,
    which would read as a spurious trend.

    Neighbouring grid values share samples, so both the mean and the gate use
    ``n_blocks`` contiguous block averages.  The gate passes when the slope
    of a line through the block averages lies within ``n_sigma`` standard
    errors of zero, or when the change it implies across the range is below
    ``resolution`` volts.
    """
    z_all = np.asarray(samples.z_grid, dtype=float)
    keep = (z_all >= z_range[0]) & (z_all <= z_range[1])
    V0 = np.asarray(samples.V0, dtype=float)[keep]
    z = z_all[keep]
    n = V0.size
    if n < 10:
        raise InsufficientDataError("V0 aggregation needs at least ten grid points")
    mean = float(V0.mean())
    scatter = float(V0.std(ddof=1))
    if scatter == 0.0:
        return V0Aggregate(mean, 0.0, 0.0, 0.0, 0.0, True)
    nb = int(min(n_blocks, n // 2))
    blocks = np.array_split(np.arange(n), nb)
    zb = np.array([z[b].mean() for b in blocks])
    vb = np.array([V0[b].mean() for b in blocks])
    sem = float(vb.std(ddof=1) / np.sqrt(nb))
    res = fit_line(zb, vb)
    slope, slope_err = float(res.parameters[0]), float(res.errors[0])
    constant = abs(slope) <= n_sigma * slope_err or abs(slope) * np.ptp(z) <= resolution
    if not constant:
        logger.warning("V0 drifts with separation: slope %.3g +/- %.3g V/nm", slope, slope_err)
    return V0Aggregate(mean, sem, scatter, slope, slope_err, bool(constant))
