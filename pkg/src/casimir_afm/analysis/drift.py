"""
Contact-point drift and the extension-to-deflection factor m.

Contact points of trace ``k`` (1-based, in measurement order) follow

    d_k = D + m s_k + (k - 1) delta

where ``delta`` is the drift of the contact extension per trace.  Two
adjacent traces ``i, i + 1`` fix a line in the (s, d) plane; the offset of a
third trace ``j`` from that line measures ``delta``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import DriftEstimationError, InsufficientDataError
from ..fitting import fit_line
from .preprocess import ContactEvent

logger = logging.getLogger(__name__)


@dataclass
class DriftEstimate:
    drift_per_interval: float    # nm per measurement interval
    n_estimates: int
    spread: float                # sample standard deviation of the estimates, nm
    estimates: np.ndarray        # one value per point set
    point_sets: list             # (i, i+1, j) triples, 1-based

    @property
    def uncertainty(self) -> float:
        """Standard error of the mean drift."""
        return self.spread / np.sqrt(self.n_estimates) if self.n_estimates > 1 else float("nan")


@dataclass
class MEstimate:
    m: float
    uncertainty: float
    intercept: float             # D: zero-deflection contact extension of trace 1
    intercept_error: float
    residual_rms: float


def _by_index(contacts) -> dict:
    by = {c.trace_index: c for c in contacts}
    if len(by) != len(contacts):
        raise DriftEstimationError("duplicate trace indices among contacts")
    return by


def drift_from_triple(ci: ContactEvent, cn: ContactEvent, cj: ContactEvent) -> float:
    """Drift per trace from adjacent contacts ``ci``, ``cn`` and a distant ``cj``.

    The line through the adjacent pair carries a drift offset of
    ``(i - 1 + r) delta`` at the deflection of ``cj`` where ``r`` is the
    fractional position of ``s_j`` along the pair, so the measured gap
    divides by ``(j - i - r)``.
    """
    si, sn, sj = ci.s_def_at_contact, cn.s_def_at_contact, cj.s_def_at_contact
    if sn == si:
        raise DriftEstimationError(f"traces {ci.trace_index} and {cn.trace_index} have equal deflection")
    r = (sj - si) / (sn - si)
    d_line = ci.d_c + (cn.d_c - ci.d_c) * r
    steps = (cj.trace_index - ci.trace_index) - r
    if abs(steps) < 1e-9:
        raise DriftEstimationError("distant trace lies on the adjacent-pair line")
    return (cj.d_c - d_line) / steps


def estimate_drift(contacts, n_sets: int = 5, min_sets: int = 3) -> DriftEstimate:
    """Average drift over the point sets ``(i, i+1, N-i+1)``, ``i = 1..n_sets``.

    Sets whose adjacent pair has equal deflection are skipped.

    Raises
    ------
    InsufficientDataError
        Fewer than 8 contacts, or too few for ``n_sets`` disjoint sets.
    DriftEstimationError
        Fewer than ``min_sets`` usable point sets.
    """
    contacts = list(contacts)
    n = len(contacts)
    if n < max(8, n_sets + 3):
        raise InsufficientDataError(f"drift estimate needs at least {max(8, n_sets + 3)} traces, got {n}")
    by = _by_index(contacts)
    idx = sorted(by)
    if idx != list(range(1, n + 1)):
        raise DriftEstimationError("trace indices must run 1..N")
    values, sets = [], []
    for i in range(1, n_sets + 1):
        j = n - i + 1
        try:
            values.append(drift_from_triple(by[i], by[i + 1], by[j]))
            sets.append((i, i + 1, j))
        except DriftEstimationError as exc:
            logger.warning("skipping drift point set (%d, %d, %d): %s", i, i + 1, j, exc)
    if len(values) < min_sets:
        raise DriftEstimationError(f"only {len(values)} usable drift point sets; need {min_sets}")
    values = np.asarray(values)
    spread = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return DriftEstimate(float(values.mean()), values.size, spread, values, sets)


def correct_contacts(contacts, drift) -> list:
    """Remove ``(k - 1) drift`` from the contact extension of trace ``k``.

    ``drift`` is a :class:`DriftEstimate` or a plain number (nm per interval).
    """
    delta = drift.drift_per_interval if isinstance(drift, DriftEstimate) else float(drift)
    return [c.shifted((c.trace_index - 1) * delta) for c in contacts]


def extract_m(contacts) -> MEstimate:
    """Fit the contact line ``d_c = D + m s`` and report ``m = |slope|``."""
    contacts = list(contacts)
    s = np.array([c.s_def_at_contact for c in contacts])
    d = np.array([c.d_c for c in contacts])
    if len(contacts) < 3:
        raise InsufficientDataError("m needs at least three contacts")
    res = fit_line(s, d)
    slope, icpt = res.parameters
    err = res.errors
    return MEstimate(float(abs(slope)), float(err[0]), float(icpt), float(err[1]), float(res.residual_rms))


def contact_reference(contacts, m_est: MEstimate, drift: float) -> dict:
    """Zero-deflection contact extension for each trace index.

    Uses the fitted contact line plus the drift model so that every trace
    shares one intercept.
    """
    return {c.trace_index: m_est.intercept + (c.trace_index - 1) * drift for c in contacts}
