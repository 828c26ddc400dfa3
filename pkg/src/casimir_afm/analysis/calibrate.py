"""
Alternating one-parameter fits of the parabola curvature for k' and z0.

The curvature obeys ``beta(z) = X(z) / k'`` with ``z = z_p + z0``.  Each
half-step fixes one unknown and fits the other over windows
``[start, end]`` in true separation, for a ladder of start points; the
values are averaged and fed to the next half-step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import CalibrationFailedError, ConvergenceError, DegenerateFitError
from ..fitting import fit_line, fit_nonlinear
from ..physics import SphereGeometry, electrostatic_X
from .parabola import ParabolaSamples

logger = logging.getLogger(__name__)

DEFAULT_STARTS = tuple(float(s) for s in np.arange(100.0, 300.0 + 1e-9, 5.0))


@dataclass
class ScanTrend:
    slope: float
    slope_error: float
    significant: bool


@dataclass
class Measured:
    value: float
    uncertainty: float

    def __iter__(self):
        return iter((self.value, self.uncertainty))


@dataclass
class CalibrationResult:
    V0: Measured
    m: Measured
    k_prime: Measured                 # N per signal unit
    k: Measured                       # N/m
    z0: Measured                      # nm
    v0_vs_z: list = field(default_factory=list)
    iterations: int = 0
    scan_values: dict = field(default_factory=dict)   # start, k_prime, z0 lists
    trajectory: list = field(default_factory=list)    # (k_prime, z0) per cycle
    trends: dict = field(default_factory=dict)        # ScanTrend for k_prime and z0
    v0_constant: bool = True
    drift: Measured = None

    def to_dict(self) -> dict:
        def pair(q):
            return None if q is None else {"value": q.value, "uncertainty": q.uncertainty}

        return {
            "V0": pair(self.V0), "m": pair(self.m), "k_prime": pair(self.k_prime), "k": pair(self.k),
            "z0": pair(self.z0), "drift": pair(self.drift), "iterations": self.iterations,
            "v0_constant": self.v0_constant,
            "scan_values": {k: [float(x) for x in v] for k, v in self.scan_values.items()},
            "trajectory": [[float(a), float(b)] for a, b in self.trajectory],
            "trends": {k: {"slope": t.slope, "slope_error": t.slope_error, "significant": t.significant}
                       for k, t in self.trends.items()},
        }


def _window(samples: ParabolaSamples, z0: float, start: float, end: float):
    z = samples.z_grid + z0
    return (z >= start) & (z <= end)


def fit_k_prime(samples: ParabolaSamples, z0: float, geom: SphereGeometry, start: float, end: float) -> float:
    """Least-squares k' with z0 fixed: ``beta = X(z) c`` with ``c = 1/k'``."""
    sel = _window(samples, z0, start, end)
    if sel.sum() < 3:
        raise DegenerateFitError(f"window [{start}, {end}] nm holds fewer than three grid points")
    X = electrostatic_X(samples.z_grid[sel] + z0, geom)
    c = float(np.dot(X, samples.beta[sel]) / np.dot(X, X))
    if not c > 0:
        raise DegenerateFitError("fitted curvature scale is not positive")
    return 1.0 / c


def fit_z0(samples: ParabolaSamples, k_prime: float, z0_start: float, geom: SphereGeometry,
           start: float, end: float) -> float:
    """Least-squares z0 with k' fixed; the window is chosen at ``z0_start``."""
    sel = _window(samples, z0_start, start, end)
    if sel.sum() < 3:
        raise DegenerateFitError(f"window [{start}, {end}] nm holds fewer than three grid points")
    zp, beta = samples.z_grid[sel], samples.beta[sel]
    floor = -float(zp.min()) + 1e-6   # keep every separation positive

    def model(x, p):
        return electrostatic_X(x + max(p[0], floor), geom) / k_prime

    res = fit_nonlinear(model, [z0_start], zp, beta, x_scale=[10.0], max_iter=100, xtol=1e-12)
    if not res.converged or not np.isfinite(res.parameters[0]):
        raise DegenerateFitError("z0 fit did not converge")
    return float(max(res.parameters[0], floor))


def _scan(fn, starts, min_survivors, what):
    vals, used = [], []
    for s in starts:
        try:
            vals.append(fn(s))
            used.append(s)
        except DegenerateFitError as exc:
            logger.debug("dropping %s start point %.1f nm: %s", what, s, exc)
    if len(vals) < min_survivors:
        raise CalibrationFailedError(f"only {len(vals)} {what} start-point fits succeeded; need {min_survivors}")
    return np.asarray(used), np.asarray(vals)


def _scan_slope_errors(samples: ParabolaSamples, z0: float, k_prime: float, geom: SphereGeometry,
                       starts, end: float):
    """Standard errors of the k' and z0 scan slopes at the converged pair.

    Windows overlap, so neighbouring scan values share most of their data and
    the residual scatter of a naive line fit understates the slope error.
    Every scan value is linearised in the curvatures ``beta_j`` and in the
    other unknown; solving the linearised fixed point of the alternation
    expresses each slope as a linear combination of independent curvature
    errors, whose variances come from the parabola fits.
    """
    starts = np.asarray(starts, dtype=float)
    z = samples.z_grid + z0
    X = electrostatic_X(z, geom)
    h = 1e-4
    J = (electrostatic_X(z + h, geom) - electrostatic_X(z - h, geom)) / (2.0 * h * k_prime)
    w = starts - starts.mean()
    w = w / np.dot(w, w)
    n_s = starts.size
    A = np.zeros((n_s, z.size))      # d k'_s / d beta at fixed z0
    B = np.zeros((n_s, z.size))      # d z0_s / d beta at fixed k'
    kappa = np.zeros(n_s)            # d k'_s / d z0
    lam = np.zeros(n_s)              # d z0_s / d k'
    for i, s in enumerate(starts):
        sel = (z >= s) & (z <= end)
        xs, js, bs = X[sel], J[sel], samples.beta[sel]
        sxx, sjj = np.dot(xs, xs), np.dot(js, js)
        c = np.dot(xs, bs) / sxx
        ks = 1.0 / c
        A[i, sel] = -ks ** 2 * xs / sxx
        # dc/dz0 with X' = J k'
        dxs = js * k_prime
        dc = (np.dot(dxs, bs) * sxx - np.dot(xs, bs) * 2.0 * np.dot(xs, dxs)) / sxx ** 2
        kappa[i] = -ks ** 2 * dc
        B[i, sel] = js / sjj
        lam[i] = np.dot(js, xs) / k_prime ** 2 / sjj
    a, b = A.mean(axis=0), B.mean(axis=0)
    kap, la = kappa.mean(), lam.mean()
    denom = 1.0 - la * kap
    dz0 = (b + la * a) / denom                   # d z0_hat / d beta
    dk = a + kap * dz0                           # d k'_hat / d beta
    coef_k = w @ A + np.dot(w, kappa) * dz0
    coef_z = w @ B + np.dot(w, lam) * dk
    sig = samples.beta_uncertainty
    inflate = np.sqrt(_correlation_factor(samples, z0, k_prime, geom, starts[0], end))
    return (inflate * float(np.sqrt(np.sum((sig * coef_k) ** 2))),
            inflate * float(np.sqrt(np.sum((sig * coef_z) ** 2))))


def _correlation_factor(samples, z0, k_prime, geom, start, end, n_batches: int = 50) -> float:
    """Variance inflation from correlated curvature errors (batch means, >= 1).

    Grid values share raw samples and trace-level calibration errors, so the
    normalised residuals are positively correlated over tens of grid points.
    """
    z = samples.z_grid + z0
    sel = (z >= start) & (z <= end)
    sig = samples.beta_uncertainty[sel]
    if not np.all(sig > 0):
        return 1.0
    r = (samples.beta[sel] - electrostatic_X(z[sel], geom) / k_prime) / sig
    size = r.size // n_batches
    if size < 2:
        return 1.0
    r = r[: size * n_batches] - r[: size * n_batches].mean()
    tau = r.reshape(n_batches, size).mean(axis=1).var(ddof=1) * size / r.var(ddof=1)
    return float(max(tau, 1.0))


def _scan_slope_error_fixed(samples, z0, k_prime, geom, starts, end) -> float:
    """Standard error of the k' scan slope when z0 is held fixed."""
    z = samples.z_grid + z0
    X = electrostatic_X(z, geom)
    starts = np.asarray(starts, dtype=float)
    w = starts - starts.mean()
    w = w / np.dot(w, w)
    g = np.zeros(z.size)
    for s, ws in zip(starts, w):
        sel = (z >= s) & (z <= end)
        xs = X[sel]
        sxx = np.dot(xs, xs)
        ks = sxx / np.dot(xs, samples.beta[sel])
        g[sel] += -ks ** 2 * ws * xs / sxx
    inflate = np.sqrt(_correlation_factor(samples, z0, k_prime, geom, starts[0], end))
    return inflate * float(np.sqrt(np.sum((samples.beta_uncertainty * g) ** 2)))


def scan_trend(starts, values, slope_error: float | None = None, n_sigma: float = 2.0,
               resolution: float = 1e-6) -> ScanTrend:
    """Line fit of scan values against start point.

    Significant when the slope exceeds ``n_sigma`` standard errors and the
    implied change over the scan exceeds ``resolution`` relative to the mean.
    ``slope_error`` overrides the line-fit standard error.
    """
    res = fit_line(starts, values)
    slope = float(res.parameters[0])
    err = float(res.errors[0]) if slope_error is None else float(slope_error)
    scale = max(abs(float(np.mean(values))), np.finfo(float).tiny)
    visible = abs(slope) * np.ptp(starts) > resolution * scale
    return ScanTrend(slope, err, bool(abs(slope) > n_sigma * err and visible))


def iterate_k_z0(samples: ParabolaSamples, m: float, geom: SphereGeometry, z0_guess: float,
                 starts=DEFAULT_STARTS, end: float = 2500.0, rel_tol_k: float = 1e-4,
                 tol_z0: float = 0.1, max_cycles: int = 50, min_survivors: int = 20,
                 fixed_z0: float | None = None, accelerate: bool = True) -> CalibrationResult:
    """Alternate k' and z0 fits until both settle.

    Each cycle fits k' at fixed z0 for every start point and averages, then
    z0 at that k' and averages.  The cycle is a map ``z0_in -> z0_out`` whose
    fixed point is the answer; plain alternation contracts slowly when k'
    and z0 are correlated, so with ``accelerate`` every third cycle starts
    from the Aitken extrapolation of the two previous cycles.

    Stops once a cycle changes k' by less than ``rel_tol_k`` (relative) and
    moves z0 by less than ``tol_z0`` nm, after at least two cycles.  With
    ``fixed_z0`` only the k' scan runs.

    The returned result carries k', k = k'/m and z0 with the standard
    deviation of the start-point scan as uncertainty; V0 and the drift are
    filled in by the pipeline.

    Raises
    ------
    ConvergenceError
        No convergence within ``max_cycles``; ``trajectory`` holds the history.
    """
    starts = np.asarray(starts, dtype=float)
    trajectory = []
    z_in = float(z0_guess if fixed_z0 is None else fixed_z0)
    z0 = z_in
    k_prev = None
    converged = False
    cycles = 0
    chain = [z_in]          # consecutive plain iterates for the extrapolation
    k_used = k_vals = z_used = z_vals = None
    for cycles in range(1, max_cycles + 1):
        k_used, k_vals = _scan(lambda s: fit_k_prime(samples, z_in, geom, s, end), starts, min_survivors, "k'")
        kp = float(k_vals.mean())
        if fixed_z0 is not None:
            z_used, z_vals = k_used, np.full(k_vals.shape, z_in)
            trajectory.append((kp, z_in))
            converged = True
            break
        z_used, z_vals = _scan(lambda s: fit_z0(samples, kp, z_in, geom, s, end), starts, min_survivors, "z0")
        z0 = float(z_vals.mean())
        trajectory.append((kp, z0))
        logger.debug("cycle %d: k'=%.8g N/signal, z0=%.6f nm", cycles, kp, z0)
        if k_prev is not None and abs(kp - k_prev) < rel_tol_k * abs(kp) and abs(z0 - z_in) < tol_z0 \
                and cycles >= 2:
            converged = True
            break
        k_prev = kp
        chain.append(z0)
        z_in = z0
        if accelerate and len(chain) == 3:
            x0, x1, x2 = chain
            denom = x2 - 2.0 * x1 + x0
            if denom != 0.0 and np.isfinite(denom):
                z_in = x0 - (x1 - x0) ** 2 / denom
            chain = [z_in]
    if not converged:
        raise ConvergenceError(f"k'/z0 iteration did not converge in {max_cycles} cycles", trajectory=trajectory)

    kp = float(k_vals.mean())
    # final k' scan at the converged z0 so the reported pair is self-consistent
    if fixed_z0 is None:
        k_used, k_vals = _scan(lambda s: fit_k_prime(samples, z0, geom, s, end), starts, min_survivors, "k'")
        kp = float(k_vals.mean())
    k_sd = float(k_vals.std(ddof=1)) if k_vals.size > 1 else 0.0
    z_sd = float(z_vals.std(ddof=1)) if z_vals.size > 1 else 0.0
    if fixed_z0 is None:
        se_k, se_z = _scan_slope_errors(samples, z0, kp, geom, k_used, end)
        trends = {"k_prime": scan_trend(k_used, k_vals, se_k), "z0": scan_trend(z_used, z_vals, se_z)}
    else:
        se_k = _scan_slope_error_fixed(samples, z0, kp, geom, k_used, end)
        trends = {"k_prime": scan_trend(k_used, k_vals, se_k), "z0": ScanTrend(0.0, 0.0, False)}
    m_meas = Measured(float(m), 0.0)
    k_n_per_m = kp / (m * 1e-9)
    result = CalibrationResult(
        V0=Measured(float("nan"), float("nan")), m=m_meas,
        k_prime=Measured(kp, k_sd), k=Measured(k_n_per_m, k_sd / (m * 1e-9)),
        z0=Measured(z0, z_sd), iterations=cycles,
        scan_values={"start_k_prime": k_used.tolist(), "k_prime": k_vals.tolist(),
                     "start_z0": z_used.tolist(), "z0": z_vals.tolist()},
        trajectory=trajectory,
        trends=trends,
    )
    logger.info("k'=%.6g N/signal, z0=%.3f nm after %d cycles", kp, z0, cycles)
    return result
