"""
Surface topography histograms and their consistency with z0.

A histogram lists, for each height bin, the percentage of the scanned area
at that height.  Heights are measured from the lowest recorded point of the
surface.  The highest peaks of sphere and plate, taken above each surface's
area-weighted mean plane, should add up to the average separation on
contact found electrostatically.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)

SURFACES = ("sphere", "plate")
NORMALIZATION_TOL = 1e-6      # percent


@dataclass(frozen=True)
class RoughnessHistogram:
    """Validated, immutable height histogram.

    Parameters
    ----------
    surface_label : {"sphere", "plate"}
    heights : array_like
        Bin heights in nm, strictly increasing and non-negative.
    percent_area : array_like
        Percentage of surface area per bin; non-negative, summing to 100.
    """

    surface_label: str
    heights: np.ndarray
    percent_area: np.ndarray

    def __post_init__(self):
        if self.surface_label not in SURFACES:
            raise ValidationError(f"surface label must be one of {SURFACES}, got {self.surface_label!r}")
        h = np.array(self.heights, dtype=float).ravel()
        p = np.array(self.percent_area, dtype=float).ravel()
        if h.size == 0 or h.size != p.size:
            raise ValidationError("heights and percentages must be non-empty and of equal length")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(p))):
            raise ValidationError("histogram contains non-finite values")
        if np.any(h < 0):
            raise ValidationError("heights must be non-negative")
        if np.any(np.diff(h) <= 0):
            raise ValidationError("heights must be strictly increasing")
        if np.any(p < 0):
            raise ValidationError("percent area must be non-negative")
        total = float(p.sum())
        if abs(total - 100.0) > NORMALIZATION_TOL:
            raise ValidationError(f"percent area sums to {total!r}, not 100")
        h.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "heights", h)
        object.__setattr__(self, "percent_area", p)

    @property
    def weights(self) -> np.ndarray:
        """Area fractions in [0, 1]."""
        return self.percent_area / 100.0

    @property
    def bin_width(self) -> float:
        """Median spacing of the height bins (0 for a single bin)."""
        return float(np.median(np.diff(self.heights))) if self.heights.size > 1 else 0.0

    def to_dict(self) -> dict:
        return {"surface_label": self.surface_label, "heights_nm": self.heights.tolist(),
                "percent_area": self.percent_area.tolist()}


@dataclass(frozen=True)
class RoughnessSummary:
    surface_label: str
    mean: float            # area-weighted mean height, nm
    rms: float             # rms deviation about the mean, nm
    max_height: float      # highest bin with nonzero area, nm
    peak_above_mean: float
    threshold: float | None
    tail_fraction: float   # area fraction strictly above threshold (0 when no threshold)
    skewness: float
    excess_kurtosis: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class ConsistencyVerdict:
    passed: bool
    peak_sum: float        # sphere plus plate peak above the mean planes, nm
    z0: float
    z0_uncertainty: float
    tolerance: float       # max(z0 uncertainty, combined bin width)
    sphere_peak: float
    plate_peak: float
    message: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def load_histogram(path, surface_label: str) -> RoughnessHistogram:
    """Read a ``height_nm,percent_area`` CSV.

    Raises
    ------
    ValidationError
        Missing columns, unparsable values, or an invalid histogram.
    FileNotFoundError
        ``path`` does not exist.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        if not {"height_nm", "percent_area"} <= cols:
            raise ValidationError(f"{path}: expected columns height_nm, percent_area; found {sorted(cols)}")
        try:
            rows = [(float(r["height_nm"]), float(r["percent_area"])) for r in reader]
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: unparsable value ({exc})") from exc
    if not rows:
        raise ValidationError(f"{path}: no histogram rows")
    h, p = zip(*rows)
    return RoughnessHistogram(surface_label, np.array(h), np.array(p))


def write_histogram(path, hist: RoughnessHistogram) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["height_nm", "percent_area"])
        for h, p in zip(hist.heights, hist.percent_area):
            w.writerow([repr(float(h)), repr(float(p))])


def summary_stats(hist: RoughnessHistogram, threshold: float | None = None) -> RoughnessSummary:
    """Area-weighted moments, highest occupied bin and tail area."""
    w, h = hist.weights, hist.heights
    mean = float(w @ h)
    dev = h - mean
    var = float(w @ dev ** 2)
    rms = float(np.sqrt(var))
    occupied = h[hist.percent_area > 0]
    top = float(occupied.max())
    if var > 0:
        skew = float(w @ dev ** 3) / var ** 1.5
        kurt = float(w @ dev ** 4) / var ** 2 - 3.0
    else:
        skew, kurt = 0.0, 0.0
    tail = 0.0 if threshold is None else float(w[h > threshold].sum())
    return RoughnessSummary(hist.surface_label, mean, rms, top, top - mean, threshold, tail, skew, kurt)


def consistency_with_z0(sphere: RoughnessHistogram, plate: RoughnessHistogram, z0: float,
                        z0_uncertainty: float) -> ConsistencyVerdict:
    """Check that the tallest sphere and plate peaks account for z0.

    Passes when ``|peak_sum - z0| <= max(z0_uncertainty, combined bin width)``,
    so a larger uncertainty can only turn a failure into a pass.
    """
    if sphere.surface_label != "sphere" or plate.surface_label != "plate":
        raise ValidationError("expected a sphere histogram and a plate histogram")
    if not np.isfinite(z0) or not np.isfinite(z0_uncertainty) or z0_uncertainty < 0:
        raise ValidationError("z0 and a non-negative uncertainty are required")
    sp = summary_stats(sphere).peak_above_mean
    pp = summary_stats(plate).peak_above_mean
    total = sp + pp
    tol = max(float(z0_uncertainty), sphere.bin_width + plate.bin_width)
    passed = bool(abs(total - z0) <= tol)
    if passed:
        msg = f"peak heights {total:.3f} nm consistent with z0 = {z0:.3f} +/- {tol:.3f} nm"
    else:
        msg = (f"peak heights {total:.3f} nm inconsistent with z0 = {z0:.3f} +/- {tol:.3f} nm; "
               "check the surfaces for dust or other contamination")
        logger.warning(msg)
    return ConsistencyVerdict(passed, total, float(z0), float(z0_uncertainty), tol, sp, pp, msg)
