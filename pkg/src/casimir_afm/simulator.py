"""
Forward model of the sphere-plate AFM experiment.

Generates interferometer fringe records, electrostatic approach traces at a
sequence of plate voltages, and a compensated Casimir trace from a known
:class:`GroundTruth`.  Every random draw comes from a substream keyed on
``(seed, kind, sequence_index)`` so traces can be generated in any order.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ValidationError
from .roughness import RoughnessHistogram
from .physics import (
    InterferenceParams,
    SphereGeometry,
    casimir_pfa_ideal,
    electrostatic_force,
    interference_intensity,
    piezo_extension,
)

BRANCHES = ("rising", "falling")

_FRINGE_STREAM = 0
_TRACE_STREAM = 1
_CASIMIR_STREAM = 2
_ROUGHNESS_STREAM = 3

# Default piezo response (nm/V^(n+1)), rising and falling branches of a 0-100 V sweep.
DEFAULT_K_RISING = (59.5, 3.0e-2, -2.0e-4, 1.0e-6, -2.0e-9)
DEFAULT_K_FALLING = (60.0, 2.0e-2, -1.0e-4, 4.0e-7, -1.0e-9)


@dataclass(frozen=True)
class TriangularWaveSpec:
    """One period of a triangular piezo drive: rises v_min -> v_max, then falls back."""

    frequency_hz: float = 0.02
    v_min: float = 0.0
    v_max: float = 100.0
    n_samples: int = 32768

    def __post_init__(self):
        if self.n_samples < 8 or self.n_samples % 2:
            raise ValidationError("n_samples must be an even number >= 8")
        if not self.v_max > self.v_min:
            raise ValidationError("v_max must exceed v_min")
        if self.frequency_hz <= 0:
            raise ValidationError("frequency must be positive")

    def time(self) -> np.ndarray:
        return np.arange(self.n_samples) / (self.frequency_hz * self.n_samples)

    def voltage(self) -> np.ndarray:
        n = self.n_samples
        k = np.arange(n)
        half = n // 2
        frac = np.where(k <= half, k / half, (n - k) / half)
        return self.v_min + (self.v_max - self.v_min) * frac

    def rising_mask(self) -> np.ndarray:
        return np.arange(self.n_samples) <= self.n_samples // 2


@dataclass(frozen=True)
class GroundTruth:
    V0_true: float = -0.337
    k_true: float = 2.0                # N/m
    m_true: float = 10.0               # nm per signal unit
    z0_true: float = 30.0              # nm
    R: float = 100.0                   # um
    piezo_K: dict = field(default_factory=lambda: {"rising": DEFAULT_K_RISING, "falling": DEFAULT_K_FALLING})
    d_c_true: float = 6000.0           # zero-deflection contact extension of the first trace, nm
    drift_per_trace: float = 0.0039    # nm per measurement interval
    scattered_slope: float = 1.0e-5    # signal per nm of extension
    noise_sigma: float = 5.0e-4        # signal units
    seed: int = 12345
    casimir_enabled: bool = True
    v0_slope_per_um: float = 0.0       # V0(z) = V0_true + slope * z[um]; injection hook
    fringe_snr: float = 100.0
    interference: dict = field(default_factory=lambda: {"I0": 0.1, "I1": 1.0, "gamma": 1.0e-3, "delta": 47.0})
    wave: TriangularWaveSpec = field(default_factory=TriangularWaveSpec)

    def __post_init__(self):
        for name in ("k_true", "m_true", "z0_true", "R"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be non-negative")
        if self.fringe_snr <= 0:
            raise ValidationError("fringe_snr must be positive")
        if set(self.piezo_K) != set(BRANCHES):
            raise ValidationError("piezo_K needs exactly 'rising' and 'falling' entries")
        for branch, K in self.piezo_K.items():
            if len(K) != 5:
                raise ValidationError(f"piezo_K[{branch}] needs K0..K4")
            ext = piezo_extension(np.linspace(self.wave.v_min, self.wave.v_max, 2001), K)
            if np.any(np.diff(ext) <= 0):
                raise ValidationError(f"piezo_K[{branch}] is not monotone over the sweep")

    @property
    def geometry(self) -> SphereGeometry:
        return SphereGeometry(self.R)

    @property
    def k_prime(self) -> float:
        """Combined constant k*m in N per signal unit."""
        return self.k_true * self.m_true * 1e-9

    def contact_extension(self, sequence_index: int) -> float:
        """Zero-deflection contact extension for the trace at ``sequence_index``."""
        return self.d_c_true + (sequence_index - 1) * self.drift_per_trace

    def interference_params(self, branch: str) -> InterferenceParams:
        p = self.interference
        return InterferenceParams(p["I0"], p["I1"], p["gamma"], p["delta"], tuple(self.piezo_K[branch]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["piezo_K"] = {b: list(v) for b, v in self.piezo_K.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        d = dict(d)
        if "wave" in d and isinstance(d["wave"], dict):
            d["wave"] = TriangularWaveSpec(**d["wave"])
        if "piezo_K" in d:
            d["piezo_K"] = {b: tuple(v) for b, v in d["piezo_K"].items()}
        return cls(**d)


@dataclass
class Trace:
    plate_voltage: float
    sequence_index: int
    time: np.ndarray
    piezo_voltage: np.ndarray
    s_def: np.ndarray
    flagged: np.ndarray = None   # samples whose static solution did not converge (snap-in)
    kind: str = "electrostatic"

    def __post_init__(self):
        if self.flagged is None:
            self.flagged = np.zeros(self.s_def.shape, dtype=bool)

    def __len__(self):
        return self.s_def.size

    def replace_signal(self, s_def) -> "Trace":
        return Trace(self.plate_voltage, self.sequence_index, self.time, self.piezo_voltage,
                     np.asarray(s_def, dtype=float), self.flagged, self.kind)


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream, int(index)])


def _extension(truth: GroundTruth, Vp: np.ndarray, rising: np.ndarray) -> np.ndarray:
    return np.where(rising,
                    piezo_extension(Vp, truth.piezo_K["rising"]),
                    piezo_extension(Vp, truth.piezo_K["falling"]))


def generate_fringe_record(truth: GroundTruth, wave: TriangularWaveSpec | None = None):
    """Interferometer intensity over one drive period.

    Returns ``(time, piezo_voltage, intensity)`` arrays.  Each branch uses its
    own expansion coefficients; noise is Gaussian with sigma ``I1 / fringe_snr``.
    """
    wave = wave or truth.wave
    t, Vp, rising = wave.time(), wave.voltage(), wave.rising_mask()
    intensity = np.where(rising,
                         interference_intensity(Vp, truth.interference_params("rising")),
                         interference_intensity(Vp, truth.interference_params("falling")))
    sigma = truth.interference["I1"] / truth.fringe_snr
    if sigma > 0 and np.isfinite(sigma):
        intensity = intensity + _rng(truth.seed, _FRINGE_STREAM, 0).normal(0.0, sigma, intensity.shape)
    return t, Vp, intensity


def _total_force(truth: GroundTruth, z, plate_voltage):
    geom = truth.geometry
    V0 = truth.V0_true + truth.v0_slope_per_um * z * 1e-3
    F = electrostatic_force(z, plate_voltage, V0, geom)
    if truth.casimir_enabled:
        F = F + casimir_pfa_ideal(z, geom)
    return F


def solve_deflection(truth: GroundTruth, gap, plate_voltage, max_iter: int = 200, tol_nm: float = 1e-6):
    """Static deflection of the free (not touching) cantilever.

    ``gap`` is the undeflected sphere-plate separation in nm.  Iterates
    ``s <- F(gap + s m) / (k m)`` from s = 0 for every sample at once.

    Returns ``(s_def, converged, exhausted)``.  ``converged`` is False for
    samples that reach z <= z0 (touching) or do not settle within
    ``max_iter`` steps; ``exhausted`` marks the latter only.
    """
    gap = np.asarray(gap, dtype=float)
    m, kp, z0 = truth.m_true, truth.k_prime, truth.z0_true
    s = np.zeros_like(gap)
    active = gap > z0
    converged = np.zeros(gap.shape, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        z = gap[active] + s[active] * m
        bad = z <= z0
        z = np.where(bad, z0, z)
        s_new = _total_force(truth, z, plate_voltage) / kp
        done = np.abs(s_new - s[active]) * m < tol_nm
        idx = np.nonzero(active)[0]
        s[idx] = np.where(bad, s[idx], s_new)
        converged[idx[done & ~bad]] = True
        still = ~(done | bad)
        active[idx[~still]] = False
    exhausted = active & (gap > z0)
    return s, converged, exhausted


def _deflection_over_period(truth: GroundTruth, d, rising, contact_ext, plate_voltage):
    m, z0 = truth.m_true, truth.z0_true
    gap = contact_ext - d + z0
    s_free, ok, flagged = solve_deflection(truth, gap, plate_voltage)
    s_contact = (d - contact_ext) / m          # sphere riding on the plate: z = z0

    s = np.empty_like(d)
    # approach: once touching, stay in contact for the rest of the rising branch
    idx_r = np.nonzero(rising)[0]
    touching = np.logical_or.accumulate(~ok[idx_r])
    s[idx_r] = np.where(touching, s_contact[idx_r], s_free[idx_r])
    # retraction: stay in contact until the spring force exceeds the attraction at z0
    idx_f = np.nonzero(~rising)[0]
    if idx_f.size:
        s_pull = _total_force(truth, np.array([z0]), plate_voltage)[0] / truth.k_prime
        attached = np.logical_and.accumulate(s_contact[idx_f] >= s_pull)
        s[idx_f] = np.where(attached | ~ok[idx_f], s_contact[idx_f], s_free[idx_f])
    return s, flagged


def _build_trace(truth, plate_voltage, sequence_index, stream, kind):
    wave = truth.wave
    t, Vp, rising = wave.time(), wave.voltage(), wave.rising_mask()
    d = _extension(truth, Vp, rising)
    s, flagged = _deflection_over_period(truth, d, rising, truth.contact_extension(sequence_index), plate_voltage)
    s = s + truth.scattered_slope * d
    if truth.noise_sigma > 0:
        s = s + _rng(truth.seed, stream, sequence_index).normal(0.0, truth.noise_sigma, s.shape)
    return Trace(float(plate_voltage), int(sequence_index), t, Vp, s, flagged, kind)


def generate_electrostatic_trace(truth: GroundTruth, plate_voltage: float, sequence_index: int) -> Trace:
    if abs(plate_voltage - truth.V0_true) > 0.5 + 1e-12:
        raise ValidationError("plate voltage must be within 0.5 V of V0 to stay in the linear regime")
    if sequence_index < 1:
        raise ValidationError("sequence_index is 1-based")
    return _build_trace(truth, plate_voltage, sequence_index, _TRACE_STREAM, "electrostatic")


def sweep_voltages(n_traces: int, v_range) -> np.ndarray:
    """Plate voltages in measurement order: a monotone sweep across ``v_range``.

    The voltages nearest V0 therefore sit in the middle of the time sequence
    and the two extremes are furthest apart in time.
    """
    return np.linspace(v_range[0], v_range[1], n_traces)


def generate_voltage_sequence(truth: GroundTruth, n_traces: int = 28, v_range=(-0.712, -0.008)) -> list:
    if n_traces < 3:
        raise ValidationError("need at least three plate voltages")
    return [generate_electrostatic_trace(truth, V, i + 1)
            for i, V in enumerate(sweep_voltages(n_traces, v_range))]


def generate_casimir_trace(truth: GroundTruth, compensated: bool = True, plate_voltage: float | None = None,
                           sequence_index: int = 29) -> Trace:
    """Approach with the plate held at V0 (or at ``plate_voltage`` if given)."""
    if plate_voltage is None:
        plate_voltage = truth.V0_true if compensated else truth.V0_true + 0.1
    return _build_trace(truth, plate_voltage, sequence_index, _CASIMIR_STREAM, "casimir")


def true_contact_extension(truth: GroundTruth, trace: Trace) -> float:
    """Extension at which the noiseless approach first touches (nm), by bisection."""
    D = truth.contact_extension(trace.sequence_index)
    lo, hi = 0.0, D
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        _, ok, _ = solve_deflection(truth, np.array([D - mid + truth.z0_true]), trace.plate_voltage,
                                 max_iter=10000, tol_nm=1e-9)
        if ok[0]:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-9:
            break
    return 0.5 * (lo + hi)


def generate_roughness(truth: GroundTruth, needle_percent: float = 5e-4):
    """Sphere and plate height histograms whose tallest peaks add up to z0.

    The plate is a narrow distribution in 0.1 nm bins (tallest bin about
    0.5 nm above its mean); the sphere has a 1 nm binned body with a rare
    needle peak placed so that both peaks above the mean planes sum to
    ``z0_true`` to within half a bin.
    """
    rng = _rng(truth.seed, _ROUGHNESS_STREAM, 0)
    hp = np.round(np.arange(11) * 0.1, 10)
    wp = np.exp(-0.5 * ((hp - 0.5) / 0.15) ** 2) * rng.uniform(0.9, 1.1, hp.size)
    plate = RoughnessHistogram("plate", hp, 100.0 * wp / wp.sum())
    plate_peak = plate.heights[-1] - float(plate.weights @ plate.heights)

    body = np.arange(16, dtype=float)
    wb = np.exp(-0.5 * ((body - 6.0) / 2.5) ** 2) * rng.uniform(0.9, 1.1, body.size)
    wb = (100.0 - needle_percent) * wb / wb.sum()
    mean_body = float(wb @ body) / 100.0
    top = max(float(np.round(truth.z0_true - plate_peak + mean_body)), body[-1] + 1.0)
    heights = np.append(body, top)
    pct = np.append(wb, needle_percent)
    return RoughnessHistogram("sphere", heights, pct), plate
