"""
Command line front end: ``simulate``, ``piezo-calib``, ``analyze``,
``roughness`` and ``report``.

Exit codes: 0 success, 1 validation or gate failure, 2 I/O error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import io as fio
from .analysis import StageError, run_analysis
from .config import RunConfig, load_config
from .errors import (
    CalibrationFailedError,
    ConvergenceError,
    DegenerateFitError,
    DriftEstimationError,
    NumericalError,
    ValidationError,
)
from .physics import SphereGeometry
from .piezo import PiezoCalibration, calibrate_piezo
from .report import result_document, write_report
from .roughness import consistency_with_z0, load_histogram, summary_stats, write_histogram
from .simulator import generate_casimir_trace, generate_fringe_record, generate_roughness, generate_voltage_sequence

logger = logging.getLogger("casimir_afm")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3
_NUMERICAL = (NumericalError, ConvergenceError, CalibrationFailedError, DegenerateFitError, DriftEstimationError,
              ArithmeticError)


class GateFailure(Exception):
    """A quality gate rejected the run; results were still written."""


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return exit_code_for(exc.cause)
    if isinstance(exc, GateFailure):
        return EXIT_VALIDATION
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, _NUMERICAL):
        return EXIT_NUMERICAL
    return EXIT_VALIDATION


def _path(value, default: Path) -> Path:
    return Path(value) if value else default


def cmd_simulate(cfg: RunConfig) -> int:
    sc = cfg.simulate
    truth = sc.truth
    run = cfg.run_path
    run.mkdir(parents=True, exist_ok=True)
    traces = generate_voltage_sequence(truth, sc.n_traces, sc.v_range)
    for t in traces:
        fio.write_trace(run, t)
    t, Vp, intensity = generate_fringe_record(truth)
    fio.write_fringes(run / fio.FRINGE_NAME, t, Vp, intensity)
    if sc.casimir_trace:
        fio.write_trace(run, generate_casimir_trace(truth, sequence_index=sc.n_traces + 1), fio.CASIMIR_NAME)
    if sc.roughness:
        for hist in generate_roughness(truth):
            write_histogram(run / fio.ROUGHNESS_NAMES[hist.surface_label], hist)
    fio.write_json(run / fio.GROUND_TRUTH_NAME,
                   {**truth.to_dict(), "n_traces": sc.n_traces, "v_range": list(sc.v_range)})
    logger.info("simulated %d traces into %s", len(traces), run)
    return EXIT_OK


def cmd_piezo_calib(cfg: RunConfig) -> int:
    pc = cfg.piezo_calib
    src = _path(pc.fringe_file, cfg.run_path / fio.FRINGE_NAME)
    out = _path(pc.output, cfg.run_path / fio.PIEZO_NAME)
    t, Vp, intensity = fio.read_fringes(src)
    try:
        cal = calibrate_piezo(t, Vp, intensity, min_fringes=pc.min_fringes, max_iter=pc.max_iter)
    except CalibrationFailedError as exc:
        if exc.partial is not None:
            print(f"partial fit: {dataclasses.asdict(exc.partial)}", file=sys.stderr)
        raise
    fio.atomic_write_text(out, cal.to_json() + "\n")
    for b, c in cal.branches.items():
        logger.info("%s branch: K=%s, rms=%.3g, %.1f fringes", b, c.K, c.residual_rms, c.n_fringes)
    return EXIT_OK


def _load_piezo(cfg: RunConfig) -> PiezoCalibration:
    path = _path(cfg.analyze.piezo_calibration, cfg.run_path / fio.PIEZO_NAME)
    if not path.exists():
        raise FileNotFoundError(f"piezo calibration {path} not found; run 'piezo-calib' first")
    return PiezoCalibration.from_json(path.read_text())


def _histograms(cfg: RunConfig, sphere, plate):
    sp = _path(sphere, cfg.run_path / fio.ROUGHNESS_NAMES["sphere"])
    pp = _path(plate, cfg.run_path / fio.ROUGHNESS_NAMES["plate"])
    if sp.exists() and pp.exists():
        return load_histogram(sp, "sphere"), load_histogram(pp, "plate")
    if sphere or plate:
        raise FileNotFoundError(f"roughness histogram {sp if not sp.exists() else pp} not found")
    return None


def cmd_analyze(cfg: RunConfig) -> int:
    ac = cfg.analyze
    run = cfg.run_path
    piezo = _load_piezo(cfg)
    traces = fio.read_run_traces(run)
    comp_path = run / f"{fio.CASIMIR_NAME}.csv"
    comp = fio.read_trace(comp_path) if comp_path.exists() else None
    hists = _histograms(cfg, ac.sphere_roughness, ac.plate_roughness)
    if hists is None and ac.require_roughness:
        raise FileNotFoundError("roughness histograms required but not found")
    geom = SphereGeometry(ac.sphere_radius_um, ac.radius_uncertainty_um)
    result = run_analysis(traces, piezo, geom, ac.pipeline, compensated_trace=comp)
    gates = dict(result.gates)
    verdict = None
    if hists is not None:
        z0 = result.calibration.z0
        verdict = consistency_with_z0(hists[0], hists[1], z0.value, z0.uncertainty)
        gates["z0_roughness_consistent"] = verdict.passed
    doc = result_document(result, gates)
    if verdict is not None:
        doc["roughness"] = verdict.to_dict()
    fio.write_json(run / fio.RESULT_NAME, doc)
    c = result.calibration
    print(f"V0 = {c.V0.value:.6f} +/- {c.V0.uncertainty:.2g} V; m = {c.m.value:.6g} nm/signal; "
          f"k' = {c.k_prime.value:.6g} N/signal; z0 = {c.z0.value:.4f} +/- {c.z0.uncertainty:.2g} nm")
    failed = []
    if not gates["v0_constant"]:
        failed.append("V0 constancy gate failed: V0 varies with separation "
                      f"(slope {result.v0.slope:.3g} +/- {result.v0.slope_error:.2g} V/nm)")
    if verdict is not None and not verdict.passed:
        failed.append(f"z0 consistency gate failed: {verdict.message}")
    for k in ("k_prime_scan_random", "z0_scan_random", "casimir_methods_agree"):
        if k in gates and not gates[k]:
            logger.warning("diagnostic %s did not pass", k)
    if failed:
        raise GateFailure("; ".join(failed))
    return EXIT_OK


def cmd_roughness(cfg: RunConfig) -> int:
    rc = cfg.roughness
    hists = _histograms(cfg, rc.sphere, rc.plate)
    if hists is None:
        raise FileNotFoundError("roughness histograms not found")
    z0, unc = rc.z0, rc.z0_uncertainty
    if z0 is None:
        res_path = cfg.run_path / fio.RESULT_NAME
        if not res_path.exists():
            raise FileNotFoundError(f"no z0 given and {res_path} not found; run 'analyze' first")
        q = fio.read_json(res_path)["calibration"]["z0"]
        z0 = q["value"]
        unc = q["uncertainty"] if unc is None else unc
    if unc is None:
        raise ValidationError("roughness.z0_uncertainty is required when z0 is given")
    verdict = consistency_with_z0(hists[0], hists[1], z0, unc)
    doc = {"sphere": summary_stats(hists[0], rc.tail_threshold).to_dict(),
           "plate": summary_stats(hists[1], rc.tail_threshold).to_dict(),
           "consistency": verdict.to_dict()}
    fio.write_json(_path(rc.output, cfg.run_path / "roughness_summary.json"), doc)
    print(verdict.message)
    if not verdict.passed:
        raise GateFailure(verdict.message)
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    rc = cfg.report
    res_path = _path(rc.result, cfg.run_path / fio.RESULT_NAME)
    if not res_path.exists():
        raise FileNotFoundError(f"result {res_path} not found; run 'analyze' first")
    doc = fio.read_json(res_path)
    truth = None
    if rc.use_ground_truth:
        tp = _path(rc.ground_truth, cfg.run_path / fio.GROUND_TRUTH_NAME)
        if tp.exists():
            truth = fio.read_json(tp)
        elif rc.ground_truth:
            raise FileNotFoundError(f"ground truth {tp} not found")
    path = write_report(doc, _path(rc.output_dir, cfg.run_path / "report"), truth)
    print(path.read_text(), end="")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "piezo-calib": cmd_piezo_calib, "analyze": cmd_analyze,
            "roughness": cmd_roughness, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="casimir-afm", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="JSON run configuration")
        p.add_argument("--run-dir", type=Path, default=None, help="override the configured run directory")
        if name == "simulate":
            p.add_argument("--seed", type=int, default=None, help="override the simulator seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        logging.getLogger().setLevel(cfg.log_level)
        if args.run_dir is not None:
            cfg.run_dir = str(args.run_dir)
        if getattr(args, "seed", None) is not None:
            cfg.simulate.truth = dataclasses.replace(cfg.simulate.truth, seed=args.seed)
        return COMMANDS[args.command](cfg)
    except Exception as exc:  # noqa: BLE001  mapped to the documented exit codes
        logger.debug("command failed", exc_info=True)
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
