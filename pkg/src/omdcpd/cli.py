"""Command-line entry points: calibrate, edd, run, detect."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .detectors import Detector, DetectorSpec
from .errors import ConfigError, InvalidParameterError, NumericDomainError
from .expfam import GammaFixedShape, model_from_spec
from .bench.calibration import ThresholdCache
from .bench.experiments import (
    ExperimentConfig,
    calibrate_all,
    edd_rows,
    load_calibrations,
    rows_to_csv,
    save_calibrations,
)
from .pointproc import EventStream, ScanConfig, scan_events

log = logging.getLogger("omdcpd")


def _load_config(path, full_scale: bool) -> ExperimentConfig:
    return ExperimentConfig.load(path).scaled(full_scale)


def cmd_calibrate(args):
    cfg = _load_config(args.config, args.full_scale)
    cache = ThresholdCache(args.cache) if args.cache else None
    cals = calibrate_all(cfg, cache)
    save_calibrations(cals, args.out)
    for name, c in cals.items():
        flag = "" if c.converged else "  (not converged)"
        print(f"{name}: b={c.threshold:.4f} ARL={c.arl:.1f}+/-{c.stderr:.1f} censored={c.censor_frac:.3f}{flag}")
    return 0


def cmd_edd(args):
    cfg = _load_config(args.config, args.full_scale)
    cals = load_calibrations(args.calib)
    rows = edd_rows(cfg, cals)
    Path(args.out).write_text(rows_to_csv(rows))
    return 0


def cmd_run(args):
    cfg = ExperimentConfig.default(args.scenario, args.full_scale, seed=args.seed)
    if args.trials is not None:
        cfg.trials = args.trials
    if args.gamma is not None:
        cfg.gamma = args.gamma
    cfg.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cache = ThresholdCache(out / "thresholds.json")
    cals = calibrate_all(cfg, cache)
    save_calibrations(cals, out / f"{cfg.scenario}_calibration.json")
    rows = edd_rows(cfg, cals)
    (out / f"{cfg.scenario}.csv").write_text(rows_to_csv(rows))
    print(rows_to_csv(rows), end="")
    return 0


def _parse_theta0(model, text):
    if text is None:
        return -1.0 if isinstance(model, GammaFixedShape) else 0.0
    vals = [float(v) for v in text.split(",")]
    return vals[0] if len(vals) == 1 else vals


def _lines(path):
    if path == "-":
        yield from sys.stdin
    else:
        with open(path) as fh:
            yield from fh


def _emit(t, stat, alarmed, khat):
    print(f"{t},{stat:.10g},{int(alarmed)},{'' if khat is None else khat}", flush=True)


def cmd_detect(args):
    print("t,statistic,alarmed,khat")
    if args.model == "hawkes":
        kind = args.detector.split("/")[0]
        cfg = ScanConfig(kind=kind, baseline=args.baseline, decay=args.decay, length=args.length,
                         step=args.step, window=args.window)
        stream = EventStream.from_lines(_lines(args.input))
        alarm = None
        for alarm in scan_events(stream.times, cfg, args.threshold):
            _emit(alarm.stop_time, alarm.statistic, alarm.stopped, alarm.change_point_estimate)
            if alarm.stopped:
                break
    else:
        model = model_from_spec(args.model)
        det = Detector(DetectorSpec.from_string(args.detector), model,
                       _parse_theta0(model, args.theta0), args.threshold)
        alarm = None
        for lineno, line in enumerate(_lines(args.input), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                x = np.array([float(v) for v in line.split(",")])
            except ValueError:
                raise InvalidParameterError(f"line {lineno}: not a row of numbers: {line!r}") from None
            if x.size != model.dim:
                raise InvalidParameterError(f"line {lineno}: expected {model.dim} values, got {x.size}")
            if model.name == "bernoulli" and not np.all((x == 0) | (x == 1)):
                raise InvalidParameterError(f"line {lineno}: Bernoulli observations must be 0 or 1")
            alarm = det.update(x)
            _emit(alarm.stop_time, alarm.statistic, alarm.stopped, alarm.change_point_estimate)
            if alarm.stopped:
                break
    record = {
        "stopped": bool(alarm.stopped) if alarm else False,
        "stop_time": int(alarm.stop_time) if alarm else 0,
        "statistic": float(alarm.statistic) if alarm else 0.0,
        "change_point_estimate": None if alarm is None else alarm.change_point_estimate,
        "threshold": args.threshold,
    }
    print(json.dumps(record))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="omdcpd", description="Sequential change-point detection toolkit.")
    p.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="calibrate thresholds for every detector in a config")
    c.add_argument("--config", required=True)
    c.add_argument("--full-scale", action="store_true", help="gamma 1e4 and 1e4 trials")
    c.add_argument("--out", required=True, help="JSON file of calibrations")
    c.add_argument("--cache", help="threshold cache file to reuse and update")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("edd", help="measure detection delays with calibrated thresholds")
    e.add_argument("--config", required=True)
    e.add_argument("--calib", required=True)
    e.add_argument("--out", required=True, help="CSV output")
    e.add_argument("--full-scale", action="store_true")
    e.set_defaults(func=cmd_edd)

    r = sub.add_parser("run", help="calibrate and measure one benchmark scenario")
    r.add_argument("--scenario", required=True, help="table1, table2, table3 or table4")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--full-scale", action="store_true")
    r.add_argument("--trials", type=int)
    r.add_argument("--gamma", type=float)
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("detect", help="run one detector over a stream of observations")
    d.add_argument("--model", required=True, help="gaussian:d, gamma, bernoulli:d or hawkes")
    d.add_argument("--detector", required=True, help="e.g. acm, asr/l1:5, cusum/fixed:1, glr/w=50")
    d.add_argument("--threshold", type=float, required=True)
    d.add_argument("--input", default="-", help="CSV file (hawkes: event-time file) or - for stdin")
    d.add_argument("--theta0", help="null natural parameter, scalar or comma list")
    d.add_argument("--baseline", type=float, default=1.0, help="hawkes baseline rate")
    d.add_argument("--decay", type=float, default=1.0, help="hawkes kernel decay")
    d.add_argument("--length", type=float, default=None, help="hawkes scan window length")
    d.add_argument("--step", type=float, default=0.05, help="hawkes SGD step")
    d.add_argument("--window", type=int, default=100, help="hawkes branch window")
    d.set_defaults(func=cmd_detect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidParameterError, NumericDomainError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
