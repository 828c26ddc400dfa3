"""
Run configuration: one JSON document with a section per subcommand.

Parsing is strict.  Unknown keys at any level raise
:class:`~casimir_afm.errors.ValidationError`, and physical parameters are
validated by constructing the domain objects they feed.

Example::

    {
      "run_dir": "run",
      "simulate": {"n_traces": 28, "truth": {"seed": 7, "noise_sigma": 0.0005}},
      "analyze": {"pipeline": {"interpolation": "linear"}}
    }
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .analysis.pipeline import AnalysisConfig
from .errors import ValidationError
from .simulator import GroundTruth, TriangularWaveSpec


def _strict(cls, data, where: str):
    """Build dataclass ``cls`` from ``data``, rejecting unknown keys."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ValidationError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValidationError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def _truth_from(data) -> GroundTruth:
    if data is not None and not isinstance(data, dict):
        raise ValidationError("simulate.truth: expected an object")
    data = dict(data or {})
    wave = _strict(TriangularWaveSpec, data.pop("wave", None), "simulate.truth.wave")
    names = {f.name for f in dataclasses.fields(GroundTruth)} - {"wave"}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValidationError(f"simulate.truth: unknown keys {unknown}")
    if "piezo_K" in data:
        data["piezo_K"] = {b: tuple(v) for b, v in data["piezo_K"].items()}
    try:
        return GroundTruth(wave=wave, **data)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"simulate.truth: {exc}") from exc


@dataclass
class SimulateConfig:
    n_traces: int = 28
    v_range: tuple = (-0.712, -0.008)
    casimir_trace: bool = True
    roughness: bool = True
    truth: GroundTruth = field(default_factory=GroundTruth)

    def __post_init__(self):
        if int(self.n_traces) != self.n_traces or self.n_traces < 3:
            raise ValidationError("simulate.n_traces must be an integer >= 3")
        if len(self.v_range) != 2 or not self.v_range[0] < self.v_range[1]:
            raise ValidationError("simulate.v_range must be an increasing pair")
        self.v_range = tuple(float(v) for v in self.v_range)


@dataclass
class PiezoCalibConfig:
    fringe_file: str | None = None      # default: <run_dir>/fringes.csv
    output: str | None = None           # default: <run_dir>/piezo_calibration.json
    min_fringes: int = 5
    max_iter: int = 500


@dataclass
class AnalyzeConfig:
    piezo_calibration: str | None = None
    sphere_radius_um: float = 100.0
    radius_uncertainty_um: float = 0.0
    sphere_roughness: str | None = None   # default: <run_dir>/roughness_sphere.csv if present
    plate_roughness: str | None = None
    require_roughness: bool = False
    pipeline: AnalysisConfig = field(default_factory=AnalysisConfig)

    def __post_init__(self):
        if not self.sphere_radius_um > 0 or self.radius_uncertainty_um < 0:
            raise ValidationError("analyze: sphere radius must be positive and its uncertainty non-negative")


@dataclass
class RoughnessConfig:
    sphere: str | None = None
    plate: str | None = None
    z0: float | None = None               # default: taken from <run_dir>/result.json
    z0_uncertainty: float | None = None
    tail_threshold: float = 20.0
    output: str | None = None


@dataclass
class ReportConfig:
    result: str | None = None
    ground_truth: str | None = None       # default: <run_dir>/ground_truth.json if present
    use_ground_truth: bool = True
    output_dir: str | None = None         # default: <run_dir>/report


@dataclass
class RunConfig:
    run_dir: str = "run"
    log_level: str = "INFO"
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    piezo_calib: PiezoCalibConfig = field(default_factory=PiezoCalibConfig)
    analyze: AnalyzeConfig = field(default_factory=AnalyzeConfig)
    roughness: RoughnessConfig = field(default_factory=RoughnessConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    @property
    def run_path(self) -> Path:
        return Path(self.run_dir)


_TOP = {"run_dir", "log_level", "simulate", "piezo_calib", "analyze", "roughness", "report"}


def parse_config(data: dict) -> RunConfig:
    """Validate a decoded JSON document into a :class:`RunConfig`."""
    if not isinstance(data, dict):
        raise ValidationError("configuration must be a JSON object")
    unknown = sorted(set(data) - _TOP)
    if unknown:
        raise ValidationError(f"unknown top-level keys {unknown}")
    for name in _TOP - {"run_dir", "log_level"}:
        if data.get(name) is not None and not isinstance(data[name], dict):
            raise ValidationError(f"{name}: expected an object")
    sim = dict(data.get("simulate") or {})
    truth = _truth_from(sim.pop("truth", None))
    simulate = _strict(SimulateConfig, {**sim, "truth": truth}, "simulate")
    an = dict(data.get("analyze") or {})
    pipe = an.pop("pipeline", None)
    if isinstance(pipe, dict):
        pipe = {k: tuple(v) if isinstance(v, list) else v for k, v in pipe.items()}
    analyze = _strict(AnalyzeConfig, {**an, "pipeline": _strict(AnalysisConfig, pipe, "analyze.pipeline")},
                      "analyze")
    cfg = RunConfig(
        run_dir=str(data.get("run_dir", "run")),
        log_level=str(data.get("log_level", "INFO")).upper(),
        simulate=simulate,
        piezo_calib=_strict(PiezoCalibConfig, data.get("piezo_calib"), "piezo_calib"),
        analyze=analyze,
        roughness=_strict(RoughnessConfig, data.get("roughness"), "roughness"),
        report=_strict(ReportConfig, data.get("report"), "report"),
    )
    if cfg.log_level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        raise ValidationError(f"unknown log level {cfg.log_level!r}")
    return cfg


def load_config(path) -> RunConfig:
    """Read and validate a JSON configuration file (``None`` gives defaults)."""
    if path is None:
        return RunConfig()
    with Path(path).open() as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(data)
