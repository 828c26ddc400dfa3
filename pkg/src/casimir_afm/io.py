"""
File formats for one experiment run directory.

Layout (one directory per run)::

    trace_001.csv ... trace_NNN.csv   electrostatic approaches
    trace_NNN.json                    sidecar: plate_voltage_V, sequence_index, branch, kind
    casimir_trace.csv / .json         compensated approach
    fringes.csv                       interferometer record
    roughness_sphere.csv, roughness_plate.csv
    ground_truth.json                 simulator truth (simulated runs only)
    piezo_calibration.json
    result.json                       calibration result

Every write goes to a temporary file in the target directory and is renamed
into place once complete.  JSON floats use Python's shortest round-trip repr.
"""
from __future__ import annotations

import csv
import json
import os
import re
import tempfile
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .simulator import Trace

TRACE_COLUMNS = ("sample_index", "time_s", "piezo_voltage_V", "sdef_signal")
FRINGE_COLUMNS = ("time_s", "piezo_voltage_V", "intensity")
TRACE_PATTERN = re.compile(r"^trace_(\d{3,})\.csv$")
CASIMIR_NAME = "casimir_trace"
FRINGE_NAME = "fringes.csv"
GROUND_TRUTH_NAME = "ground_truth.json"
PIEZO_NAME = "piezo_calibration.json"
RESULT_NAME = "result.json"
ROUGHNESS_NAMES = {"sphere": "roughness_sphere.csv", "plate": "roughness_plate.csv"}


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` through a same-directory temporary file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    with Path(path).open() as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc


def write_csv(path, header, columns) -> None:
    """Write equal-length ``columns`` under ``header`` at full precision."""
    cols = [np.asarray(c).ravel().tolist() for c in columns]
    if len({len(c) for c in cols}) > 1:
        raise ValueError("columns differ in length")
    lines = [",".join(header)]
    lines.extend(",".join(map(repr, row)) for row in zip(*cols))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path, required) -> dict:
    """Read a numeric CSV into ``{column: float array}``; ``required`` columns must exist."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValidationError(f"{path}: empty file")
        missing = [c for c in required if c not in header]
        if missing:
            raise ValidationError(f"{path}: missing columns {missing}")
        try:
            rows = np.array([[float(x) for x in r] for r in reader if r], dtype=float)
        except ValueError as exc:
            raise ValidationError(f"{path}: unparsable value ({exc})") from exc
    if rows.size == 0:
        rows = np.empty((0, len(header)))
    if rows.shape[1] != len(header):
        raise ValidationError(f"{path}: ragged rows")
    return {name: rows[:, i] for i, name in enumerate(header)}


def trace_name(sequence_index: int) -> str:
    return f"trace_{sequence_index:03d}"


def write_trace(directory, trace: Trace, basename: str | None = None) -> Path:
    directory = Path(directory)
    base = basename or trace_name(trace.sequence_index)
    csv_path = directory / f"{base}.csv"
    write_csv(csv_path, TRACE_COLUMNS,
              [np.arange(len(trace)), trace.time, trace.piezo_voltage, trace.s_def])
    write_json(directory / f"{base}.json", {
        "plate_voltage_V": float(trace.plate_voltage),
        "sequence_index": int(trace.sequence_index),
        "branch": "full_period",
        "kind": trace.kind,
    })
    return csv_path


def read_trace(csv_path) -> Trace:
    csv_path = Path(csv_path)
    side = csv_path.with_suffix(".json")
    if not side.exists():
        raise FileNotFoundError(f"missing sidecar {side}")
    meta = read_json(side)
    for key in ("plate_voltage_V", "sequence_index"):
        if key not in meta:
            raise ValidationError(f"{side}: missing {key}")
    cols = read_csv(csv_path, TRACE_COLUMNS)
    if cols["time_s"].size < 8:
        raise ValidationError(f"{csv_path}: too few samples")
    return Trace(float(meta["plate_voltage_V"]), int(meta["sequence_index"]), cols["time_s"],
                 cols["piezo_voltage_V"], cols["sdef_signal"], kind=meta.get("kind", "electrostatic"))


def discover_traces(directory) -> list:
    """Electrostatic trace files of a run directory, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"run directory {directory} does not exist")
    return sorted(p for p in directory.iterdir() if TRACE_PATTERN.match(p.name))


def read_run_traces(directory) -> list:
    paths = discover_traces(directory)
    if not paths:
        raise FileNotFoundError(f"no trace_NNN.csv files in {directory}")
    return [read_trace(p) for p in paths]


def write_fringes(path, time, piezo_voltage, intensity) -> None:
    write_csv(path, FRINGE_COLUMNS, [time, piezo_voltage, intensity])


def read_fringes(path):
    cols = read_csv(path, FRINGE_COLUMNS)
    return cols["time_s"], cols["piezo_voltage_V"], cols["intensity"]
