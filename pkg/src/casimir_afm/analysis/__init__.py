"""
Electrostatic calibration chain and Casimir force extraction.
"""
from __future__ import annotations

from .pipeline import AnalysisConfig, AnalysisResult, StageError, run_analysis

__all__ = ["AnalysisConfig", "AnalysisResult", "StageError", "run_analysis"]
