"""
Calibration and force extraction for sphere-plate AFM Casimir measurements.

The package covers the electrostatic and Casimir force models, a synthetic
instrument simulator, piezo calibration from interference fringes, the
electrostatic calibration chain (V0, m, k', z0, drift), surface roughness
checks, and a command line front end.
"""
from __future__ import annotations

__version__ = "0.1.0"
