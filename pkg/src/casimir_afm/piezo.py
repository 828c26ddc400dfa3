"""
Piezo extension calibration from an interferometer fringe record.

Each branch of the triangular drive is fitted separately to

    I = I0 + I1/2 (1 - gamma Vp) {1 + cos[4 pi (K(Vp) Vp + delta) / lambda]}

with ``K(Vp) = K0 + K1 Vp + ... + K4 Vp^4``.  Internally the fit works in
the normalised voltage ``u = Vp / Vs`` (``Vs`` = largest |Vp| in the branch)
so that all polynomial coefficients are nanometres.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CalibrationFailedError, InsufficientDataError, ValidationError
from .fitting import fit_nonlinear
from .physics import HALF_WAVELENGTH_NM, LASER_WAVELENGTH_NM, expansion_coefficient, piezo_extension

logger = logging.getLogger(__name__)

BRANCHES = ("rising", "falling")


class ExtrapolationWarning(UserWarning):
    """A voltage outside the calibrated range was converted to an extension."""


@dataclass
class BranchCalibration:
    K: tuple
    I0: float
    I1: float
    gamma: float
    delta: float
    v_range: tuple
    covariance: list = None
    residual_rms: float = float("nan")
    n_fringes: float = float("nan")

    @property
    def K_errors(self) -> tuple:
        if self.covariance is None:
            return (float("nan"),) * 5
        cov = np.asarray(self.covariance)
        return tuple(float(e) for e in np.sqrt(np.clip(np.diag(cov)[4:9], 0, None)))


@dataclass
class PiezoCalibration:
    branches: dict = field(default_factory=dict)
    wavelength_nm: float = LASER_WAVELENGTH_NM

    def __getitem__(self, branch: str) -> BranchCalibration:
        return self.branches[branch]

    def to_json(self) -> str:
        return json.dumps({"wavelength_nm": self.wavelength_nm,
                           "branches": {b: asdict(c) for b, c in self.branches.items()}}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PiezoCalibration":
        d = json.loads(text)
        unknown = set(d) - {"wavelength_nm", "branches"}
        if unknown:
            raise ValidationError(f"unknown keys in piezo calibration: {sorted(unknown)}")
        branches = {}
        for b, c in d["branches"].items():
            if b not in BRANCHES:
                raise ValidationError(f"unknown branch {b!r}")
            c = dict(c)
            c["K"] = tuple(c["K"])
            c["v_range"] = tuple(c["v_range"])
            branches[b] = BranchCalibration(**c)
        return cls(branches, d.get("wavelength_nm", LASER_WAVELENGTH_NM))

    @classmethod
    def from_K(cls, K_by_branch: dict, v_range=(0.0, 100.0)) -> "PiezoCalibration":
        """Calibration with known coefficients (interference parameters unset)."""
        return cls({b: BranchCalibration(tuple(K), 0.0, 1.0, 0.0, 0.0, tuple(v_range))
                    for b, K in K_by_branch.items()})


def split_branches(piezo_voltage):
    """Indices of the rising and falling parts of a triangular drive record.

    Direction is the sign of the first difference after a 3-sample majority
    filter, so an isolated glitch at the apex does not open a new segment.
    Each returned branch is the longest run in its direction; the apex
    sample is shared by both.
    """
    v = np.asarray(piezo_voltage, dtype=float)
    if v.size < 8:
        raise InsufficientDataError("record too short to contain a drive period")
    sign = np.sign(np.diff(v))
    # flat steps inherit the previous direction
    for i in range(1, sign.size):
        if sign[i] == 0:
            sign[i] = sign[i - 1]
    padded = np.concatenate([sign[:1], sign, sign[-1:]])
    filt = np.sign(padded[:-2] + padded[1:-1] + padded[2:])
    filt[filt == 0] = sign[filt == 0]

    edges = np.nonzero(np.diff(filt))[0] + 1
    starts = np.concatenate([[0], edges])
    stops = np.concatenate([edges, [filt.size]])
    best = {1.0: None, -1.0: None}
    for a, b in zip(starts, stops):
        direction = filt[a]
        if direction == 0:
            continue
        if best[direction] is None or (b - a) > (best[direction][1] - best[direction][0]):
            best[direction] = (a, b)
    span = np.ptp(v)
    out = []
    for direction in (1.0, -1.0):
        seg = best[direction]
        if seg is None:
            raise InsufficientDataError("record holds less than one full drive period")
        idx = np.arange(seg[0], seg[1] + 1)  # sample after the last rising step belongs to it
        if np.ptp(v[idx]) < 0.9 * span:
            raise InsufficientDataError("record holds less than one full drive period")
        out.append(idx)
    rising, falling = out
    # the apex sample ends the rising sweep and starts the falling one
    apex = rising[-1]
    if falling[0] > apex:
        falling = np.concatenate([[apex], falling])
    return rising, falling


def count_fringes(intensity, hysteresis: float = 0.5):
    """Number of fringes between the first and last level crossing.

    Returns ``(n_fringes, first_index, last_index)``.  Crossings of the
    normalised signal use a Schmitt trigger at ``+/- hysteresis``; successive
    crossings are half a fringe apart.
    """
    I = np.asarray(intensity, dtype=float)
    lo, hi = np.percentile(I, [2, 98])
    if hi <= lo:
        return 0.0, 0, 0
    y = 2.0 * (I - lo) / (hi - lo) - 1.0
    state = 0
    crossings = []
    for i, val in enumerate(y):
        if val > hysteresis and state <= 0:
            if state < 0:
                crossings.append(i)
            state = 1
        elif val < -hysteresis and state >= 0:
            if state > 0:
                crossings.append(i)
            state = -1
    if len(crossings) < 2:
        return 0.0, 0, 0
    return (len(crossings) - 1) / 2.0, crossings[0], crossings[-1]


def _model_normalised(lam):
    four_pi_over_lam = 4.0 * np.pi / lam

    def model(u, p):
        I0, I1, g, delta, c0, c1, c2, c3, c4 = p
        ext = u * (c0 + u * (c1 + u * (c2 + u * (c3 + u * c4))))
        return I0 + 0.5 * I1 * (1.0 - g * u) * (1.0 + np.cos(four_pi_over_lam * (ext + delta)))

    return model


def fit_piezo_branch(piezo_voltage, intensity, wavelength_nm: float = LASER_WAVELENGTH_NM,
                     min_fringes: float = 5.0, max_iter: int = 500) -> BranchCalibration:
    """Fit one branch of the fringe record.

    The fit starts from the fringe-count estimate of K0 and grows the voltage
    window from the low-voltage end, freeing higher-order coefficients as
    the window lengthens so the phase never slips by a whole fringe.

    Raises
    ------
    InsufficientDataError
        Fewer than ``min_fringes`` fringes in the branch.
    CalibrationFailedError
        The final fit does not converge; the partial result is attached.
    """
    Vp = np.asarray(piezo_voltage, dtype=float)
    I = np.asarray(intensity, dtype=float)
    if Vp.shape != I.shape:
        raise ValidationError("voltage and intensity arrays differ in length")
    order = np.argsort(np.abs(Vp), kind="stable")
    Vp, I = Vp[order], I[order]
    Vs = float(np.max(np.abs(Vp)))
    if Vs == 0:
        raise InsufficientDataError("branch has no voltage span")
    u = Vp / Vs
    half = wavelength_nm / 2.0

    n_fr, i_first, i_last = count_fringes(I)
    if n_fr < min_fringes:
        raise InsufficientDataError(f"branch spans {n_fr:.1f} fringes; need at least {min_fringes}")
    span_u = abs(u[i_last] - u[i_first])
    c0 = n_fr * half / span_u
    lo, hi = np.percentile(I, [1, 99])
    p = np.array([lo, hi - lo, 0.0, 0.0, c0, 0.0, 0.0, 0.0, 0.0])
    scale = np.array([hi - lo, hi - lo, 0.1, half, c0, 0.1 * c0, 0.1 * c0, 0.1 * c0, 0.1 * c0])
    lower = np.array([-np.inf, 1e-3 * (hi - lo), -0.99, -np.inf, 0.0, -np.inf, -np.inf, -np.inf, -np.inf])
    upper = np.array([np.inf, np.inf, 0.99, np.inf, np.inf, np.inf, np.inf, np.inf, np.inf])
    model = _model_normalised(wavelength_nm)

    def sub_fit(free, window, p, max_it):
        free = np.asarray(free)
        sel = slice(0, window)

        def sub_model(uu, q):
            full = p.copy()
            full[free] = q
            return model(uu, full)

        res = fit_nonlinear(sub_model, p[free], u[sel], I[sel], bounds=(lower[free], upper[free]),
                            x_scale=scale[free], max_iter=max_it)
        out = p.copy()
        out[free] = res.parameters
        return out, res

    n = u.size
    fringe_len = max(int(n / n_fr), 8)
    # phase offset start: best of a few trial offsets over the first fringes
    window = min(n, 3 * fringe_len)
    best = None
    for trial in np.linspace(0.0, half, 8, endpoint=False):
        q = p.copy()
        q[3] = trial
        q, res = sub_fit([3, 4], window, q, 100)
        cost = res.residual_rms
        if best is None or cost < best[1]:
            best = (q, cost)
    p = best[0]

    stages = [(3, [0, 1, 3, 4]), (5, [0, 1, 3, 4, 5]), (8, [0, 1, 2, 3, 4, 5, 6]), (12, list(range(9)))]
    for n_fringe_window, free in stages:
        window = min(n, n_fringe_window * fringe_len)
        p, _ = sub_fit(free, window, p, 200)
        if window == n:
            break
    while window < n:
        window = min(n, int(window * 1.5))
        p, res = sub_fit(list(range(9)), window, p, 200)
    p, res = sub_fit(list(range(9)), n, p, max_iter)

    cov_n = res.covariance
    # map normalised parameters back: K_n = c_n / Vs^(n+1), gamma = g / Vs
    J = np.diag([1.0, 1.0, 1.0 / Vs, 1.0] + [Vs ** -(k + 1) for k in range(5)])
    p_phys = J @ p
    cov = (J @ cov_n @ J.T).tolist() if np.all(np.isfinite(cov_n)) else None
    cal = BranchCalibration(
        K=tuple(float(k) for k in p_phys[4:]),
        I0=float(p_phys[0]), I1=float(p_phys[1]), gamma=float(p_phys[2]),
        delta=float(np.mod(p_phys[3], half)),
        v_range=(float(np.min(piezo_voltage)), float(np.max(piezo_voltage))),
        covariance=cov, residual_rms=float(res.residual_rms), n_fringes=float(n_fr))
    if not res.converged:
        raise CalibrationFailedError("piezo fit did not converge", partial=cal)
    logger.info("piezo branch: K0=%.4f nm/V, rms=%.3g over %.1f fringes", cal.K[0], cal.residual_rms, n_fr)
    return cal


def calibrate_piezo(time, piezo_voltage, intensity, **kwargs) -> PiezoCalibration:
    """Split a fringe record into branches and fit each one."""
    del time
    rising, falling = split_branches(piezo_voltage)
    Vp = np.asarray(piezo_voltage, dtype=float)
    I = np.asarray(intensity, dtype=float)
    cal = PiezoCalibration(wavelength_nm=kwargs.get("wavelength_nm", LASER_WAVELENGTH_NM))
    for name, idx in (("rising", rising), ("falling", falling)):
        cal.branches[name] = fit_piezo_branch(Vp[idx], I[idx], **kwargs)
    return cal


def extension_from_voltage(cal: PiezoCalibration, piezo_voltage, branch: str = "rising"):
    """Piezo extension ``K(Vp) Vp`` in nm.

    Voltages outside the calibrated range are converted anyway, with an
    :class:`ExtrapolationWarning`.
    """
    if branch not in cal.branches:
        raise ValidationError(f"no calibration for branch {branch!r}")
    bc = cal.branches[branch]
    Vp = np.asarray(piezo_voltage, dtype=float)
    lo, hi = bc.v_range
    tol = 1e-9 * max(abs(lo), abs(hi), 1.0)
    if np.any(Vp < lo - tol) or np.any(Vp > hi + tol):
        warnings.warn(f"extrapolating piezo extension outside [{lo}, {hi}] V", ExtrapolationWarning,
                      stacklevel=2)
    return piezo_extension(Vp, bc.K)


__all__ = [
    "BranchCalibration", "PiezoCalibration", "ExtrapolationWarning", "split_branches", "count_fringes",
    "fit_piezo_branch", "calibrate_piezo", "extension_from_voltage", "expansion_coefficient",
    "HALF_WAVELENGTH_NM",
]
