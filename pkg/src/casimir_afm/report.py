"""
Result documents, figure data files and the plain-text report.

``result_document`` turns an :class:`AnalysisResult` into a JSON-ready dict
that carries both the calibration values and the data behind five figure
files:

* ``parabolas.csv``: deflection against plate voltage at a few separations
* ``v0_vs_separation.csv``: V0 from every parabola fit along the grid
* ``contact_region.csv``: approach samples around each contact
* ``contact_drift.csv``: contact points before and after drift correction
* ``parameter_scans.csv``: k' (scan 0, N/signal) and z0 (scan 1, nm) against the
  fit-window start
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .io import atomic_write_text, write_csv

FIGURE_FILES = ("parabolas.csv", "v0_vs_separation.csv", "contact_region.csv",
                "contact_drift.csv", "parameter_scans.csv")

# (name, kind, bound): absolute or relative error bound on the reference round-trip
TRUTH_BOUNDS = (
    ("V0", "absolute", 0.002),
    ("m", "relative", 0.005),
    ("k_prime", "relative", 0.01),
    ("z0", "absolute", 1.0),
)

PARABOLA_SEPARATIONS = (100.0, 200.0, 500.0, 1000.0, 2000.0)
CONTACT_HALF_WINDOW = 30


def result_document(result, gates: dict | None = None) -> dict:
    """JSON-ready summary of an analysis run including figure data."""
    cal = result.calibration
    doc = {"calibration": cal.to_dict(), "gates": dict(result.gates if gates is None else gates)}
    doc["v0_aggregate"] = {k: getattr(result.v0, k) for k in
                           ("V0", "uncertainty", "scatter", "slope", "slope_error", "constant")}
    doc["drift_estimate"] = {"drift_per_interval": result.drift.drift_per_interval,
                             "estimates": result.drift.estimates, "point_sets": result.drift.point_sets}
    doc["m_uncorrected"] = {"value": result.m_uncorrected.m, "uncertainty": result.m_uncorrected.uncertainty}
    doc["scattered_light"] = {"slope": result.background.slope, "offset": result.background.offset}
    if result.comparison is not None:
        c = result.comparison
        doc["casimir_comparison"] = {"fraction_within": c.fraction_within, "agree": c.agree,
                                     "z_range": list(c.z_range)}

    s = result.samples
    z0 = cal.z0.value
    picks = sorted({int(np.argmin(np.abs(s.z_grid + z0 - zt))) for zt in PARABOLA_SEPARATIONS})
    parabolas = []
    for i in picks:
        for V, S in zip(s.plate_voltages, s.signals[i]):
            fit = s.beta[i] * (V - s.V0[i]) ** 2 + s.S0[i]
            parabolas.append([float(s.z_grid[i] + z0), float(V), float(S), float(fit)])
    v0_curve = np.column_stack([s.z_grid + z0, s.V0, s.V0_uncertainty]).tolist()
    contact_region = []
    for a, c in zip(result.approaches, result.contacts):
        lo, hi = max(c.index_Y - CONTACT_HALF_WINDOW, 0), min(c.index_Y + CONTACT_HALF_WINDOW, a.d.size)
        for j in range(lo, hi):
            contact_region.append([a.sequence_index, float(a.d[j]), float(a.s[j]), int(j >= c.index_Y)])
    contact_drift = [[c.trace_index, c.s_def_at_contact, c.d_c, cc.d_c]
                     for c, cc in zip(result.contacts, result.corrected_contacts)]
    sv = cal.scan_values
    scans = [[0, a, b] for a, b in zip(sv.get("start_k_prime", []), sv.get("k_prime", []))]
    scans += [[1, a, b] for a, b in zip(sv.get("start_z0", []), sv.get("z0", []))]
    doc["figures"] = {"parabolas": parabolas, "v0_curve": v0_curve, "contact_region": contact_region,
                      "contact_drift": contact_drift, "scans": scans}
    curves = {"offset": result.casimir_offset}
    if result.compensated is not None:
        curves["compensated"] = result.compensated
    doc["casimir"] = {k: {"z": v.z, "F": v.F, "sigma": v.sigma} for k, v in curves.items()}
    return doc


def write_figures(doc: dict, out_dir) -> list:
    """Write the five figure CSVs; returns their paths."""
    out = Path(out_dir)
    f = doc["figures"]
    specs = [
        (("separation_nm", "plate_voltage_V", "sdef_signal", "parabola_fit"), f["parabolas"]),
        (("separation_nm", "V0_V", "V0_uncertainty_V"), f["v0_curve"]),
        (("sequence_index", "extension_nm", "sdef_signal", "after_contact"), f["contact_region"]),
        (("sequence_index", "sdef_at_contact", "contact_extension_nm", "corrected_extension_nm"), f["contact_drift"]),
        (("scan", "window_start_nm", "value"), f["scans"]),
    ]
    paths = []
    for name, (header, rows) in zip(FIGURE_FILES, specs):
        arr = np.asarray(rows, dtype=float).reshape(-1, len(header))
        cols = [arr[:, i].astype(int) if h in ("sequence_index", "after_contact", "scan") else arr[:, i]
                for i, h in enumerate(header)]
        write_csv(out / name, header, cols)
        paths.append(out / name)
    return paths


def truth_comparison(doc: dict, truth: dict) -> list:
    """Rows ``(name, recovered, true, error, kind, bound, within)``."""
    cal = doc["calibration"]
    true_vals = {"V0": truth["V0_true"], "m": truth["m_true"], "z0": truth["z0_true"],
                 "k_prime": truth["k_true"] * truth["m_true"] * 1e-9}
    rows = []
    for name, kind, bound in TRUTH_BOUNDS:
        got, want = cal[name]["value"], true_vals[name]
        err = got - want if kind == "absolute" else got / want - 1.0
        rows.append((name, got, want, err, kind, bound, bool(abs(err) <= bound)))
    return rows


def summary_text(doc: dict, truth: dict | None = None) -> str:
    cal = doc["calibration"]
    lines = ["Calibration summary", "==================="]
    units = {"V0": "V", "m": "nm/signal", "k_prime": "N/signal", "k": "N/m", "z0": "nm", "drift": "nm/trace"}
    for name, unit in units.items():
        q = cal.get(name)
        if q is not None:
            lines.append(f"{name:8s} = {q['value']:.6g} +/- {q['uncertainty']:.2g} {unit}")
    lines.append(f"k'/z0 cycles: {cal['iterations']}")
    lines.append("")
    lines.append("Gates")
    for k, v in sorted(doc["gates"].items()):
        lines.append(f"  {k:26s} {'pass' if v else 'FAIL'}")
    if "casimir_comparison" in doc:
        c = doc["casimir_comparison"]
        lines.append(f"Casimir methods: {100 * c['fraction_within']:.1f}% of grid points within 2 sigma "
                     f"in [{c['z_range'][0]:.0f}, {c['z_range'][1]:.0f}] nm")
    if truth is not None:
        lines += ["", "Recovered vs true", "-----------------",
                  f"{'quantity':8s} {'recovered':>14s} {'true':>14s} {'error':>11s} {'bound':>16s}  ok"]
        for name, got, want, err, kind, bound, ok in truth_comparison(doc, truth):
            lines.append(f"{name:8s} {got:14.7g} {want:14.7g} {err:11.3g} {kind[:3]} {bound:12.3g}  "
                         f"{'yes' if ok else 'NO'}")
    return "\n".join(lines) + "\n"


def write_report(doc: dict, out_dir, truth: dict | None = None) -> Path:
    out = Path(out_dir)
    write_figures(doc, out)
    path = out / "report.txt"
    atomic_write_text(path, summary_text(doc, truth))
    return path
