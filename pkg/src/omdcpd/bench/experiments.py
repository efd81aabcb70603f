"""Experiment configurations and runners for the four benchmark scenarios.

=========  ==================  =============================================
scenario   model               sweep (post-change parameter)
=========  ==================  =============================================
table1     gaussian:20         p: ceil(20 p) random coordinates of the mean
                               move from 0 to 1
table2     gamma               beta: the rate moves from 1 to beta
table3     bernoulli:190       n: n random edges move from p=0.2 to p=0.8
table4     Poisson -> Hawkes   theta: excitation magnitude after the change
custom     any model string    natural post-change parameters, given directly
=========  ==================  =============================================

Every (detector, sweep value) pair gets its own trial seeds derived from the
master seed, so results are reproducible and do not depend on run order.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..detectors import DetectorSpec
from ..errors import ConfigError
from ..expfam import model_from_spec
from ..pointproc import ScanConfig, hawkes_runner
from .calibration import (
    CalibrationResult,
    EddResult,
    ThresholdCache,
    calibrate_runner,
    calibrate_threshold,
    edd_from_records,
    estimate_edd,
)

log = logging.getLogger(__name__)

CSV_COLUMNS = ("scenario", "param", "detector", "estimator", "gamma", "threshold",
               "edd_mean", "edd_stderr", "trials", "censor_frac", "seed")

ALIASES = {
    "table1-gaussian": "table1",
    "table2-gamma": "table2",
    "table3-erdos-renyi": "table3",
    "table4-hawkes": "table4",
    "hawkes": "table4",
}

# Bernoulli step schedule eta_t = 1 / (t + c).  With eta_1 = 1 the first update
# puts the dual iterate at 0 or 1, i.e. an estimate at the edge of the natural
# domain, and every later mismatch costs ~27 nats per edge.  A pseudo-count of
# c prior observations at p0 keeps the estimates moderate; with 190 edges the
# per-step signal is large, so c must be large for delays to depend on n.
BERNOULLI_SCHEDULE = "shifted:1500"

_DEFAULTS = {
    "table1": dict(
        model="gaussian:20", theta0=0.0, sweep=[0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
        detectors=[
            {"name": "CUSUM", "spec": "cusum/fixed:1"},
            {"name": "Shrinkage", "spec": "acm/shrink:soft,auto"},
            {"name": "GLR", "spec": "glr"},
            {"name": "ASR", "spec": "asr"},
            {"name": "ACM", "spec": "acm"},
            {"name": "ASR-l1", "spec": "asr/l1:5"},
            {"name": "ACM-l1", "spec": "acm/l1:5"},
        ],
    ),
    "table2": dict(
        model="gamma", theta0=-1.0, sweep=[0.1, 0.5, 2.0, 5.0, 10.0],
        detectors=[
            {"name": "CUSUM", "spec": "cusum/fixed:classical=2"},
            {"name": "MOM", "spec": "asr/mom"},
            {"name": "GLR", "spec": "glr"},
            {"name": "ASR", "spec": "asr"},
            {"name": "ACM", "spec": "acm"},
        ],
    ),
    "table3": dict(
        model="bernoulli:190", theta0=math.log(0.2 / 0.8), sweep=[78, 100, 120, 150, 170, 190],
        detectors=[
            {"name": "CUSUM", "spec": "cusum/fixed:classical=0.8"},
            {"name": "GLR", "spec": "glr"},
            {"name": "ASR", "spec": f"asr/{BERNOULLI_SCHEDULE}"},
            {"name": "ACM", "spec": f"acm/{BERNOULLI_SCHEDULE}"},
        ],
    ),
    "table4": dict(
        model="hawkes", theta0=0.0, sweep=[0.4, 0.5, 0.6, 0.7],
        detectors=[{"name": "ACM", "spec": "acm"}, {"name": "ASR", "spec": "asr"}],
    ),
}


@dataclass
class ExperimentConfig:
    """One benchmark: a model, a list of detectors and a sweep of alternatives.

    ``theta0`` and custom sweep values are natural parameters.  ``cap``
    defaults to ``20 * gamma``; ``edd_trials`` defaults to ``trials``.  The
    ``hawkes`` block (``baseline``, ``decay``, ``length``, ``step``) only
    applies to table4.
    """

    scenario: str
    model: str = ""
    theta0: float | list = 0.0
    detectors: list = field(default_factory=list)
    gamma: float = 1000.0
    trials: int = 2000
    edd_trials: int | None = None
    window: int = 100
    cap: int | None = None
    seed: int = 0
    sweep: list = field(default_factory=list)
    tolerance: float = 0.05
    hawkes: dict = field(default_factory=dict)

    # -- construction ----------------------------------------------------------
    @classmethod
    def default(cls, scenario: str, full_scale: bool = False, seed: int = 0) -> "ExperimentConfig":
        """Desk-scale defaults (gamma 1000, 2000 trials; table4 gamma 500).

        ``full_scale`` switches to gamma 10000 with 10000 trials (table4:
        gamma 5000).
        """
        name = ALIASES.get(scenario, scenario)
        if name not in _DEFAULTS:
            raise ConfigError(f"unknown scenario {scenario!r}; expected one of {sorted(_DEFAULTS)}")
        d = json.loads(json.dumps(_DEFAULTS[name]))
        gamma = 500.0 if name == "table4" else 1000.0
        trials = 2000
        if full_scale:
            gamma, trials = gamma * 10, 10000
        hawkes = {"baseline": 1.0, "decay": 1.0, "length": 10.0, "step": 0.05} if name == "table4" else {}
        return cls(scenario=name, gamma=gamma, trials=trials, seed=seed, hawkes=hawkes, **d)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(raw) - known - {"full_scale"})
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        if "scenario" not in raw:
            raise ConfigError("config needs a 'scenario'")
        scenario = ALIASES.get(raw["scenario"], raw["scenario"])
        if scenario in _DEFAULTS:
            base = asdict(cls.default(scenario, bool(raw.get("full_scale", False))))
        else:
            base = {}
        base.update({k: v for k, v in raw.items() if k != "full_scale"})
        base["scenario"] = scenario
        cfg = cls(**base)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(raw)

    def to_dict(self):
        return asdict(self)

    def scaled(self, full_scale: bool) -> "ExperimentConfig":
        if not full_scale:
            return self
        g = 5000.0 if self.is_hawkes else 10000.0
        return replace(self, gamma=g, trials=10000, edd_trials=None, cap=None)

    # -- derived -----------------------------------------------------------------
    @property
    def is_hawkes(self) -> bool:
        return self.scenario == "table4" or self.model == "hawkes"

    @property
    def run_cap(self) -> int:
        return int(self.cap) if self.cap is not None else int(20 * self.gamma)

    @property
    def n_edd(self) -> int:
        return int(self.edd_trials) if self.edd_trials is not None else int(self.trials)

    def model_obj(self):
        return model_from_spec(self.model)

    def detector_specs(self):
        """(name, DetectorSpec) pairs; the config window applies unless a spec sets ``w=``."""
        out = []
        for d in self.detectors:
            text = d["spec"] if isinstance(d, dict) else str(d)
            name = d.get("name", text) if isinstance(d, dict) else text
            spec = DetectorSpec.from_string(text, name=name)
            if "w=" not in text and spec.kind != "sprt":
                spec = replace(spec, window=int(self.window))
            out.append((name, spec))
        return out

    def scan_config(self, kind: str) -> ScanConfig:
        h = {"baseline": 1.0, "decay": 1.0, "length": None, "step": 0.05, **self.hawkes}
        return ScanConfig(kind=kind, baseline=float(h["baseline"]), decay=float(h["decay"]),
                          length=None if h["length"] is None else float(h["length"]),
                          step=float(h["step"]), window=int(self.window))

    # -- validation ----------------------------------------------------------------
    def validate(self) -> None:
        """Raise ConfigError listing every problem found."""
        errs = []
        if self.scenario not in _DEFAULTS and self.scenario != "custom":
            errs.append(f"unknown scenario {self.scenario!r}")
        if not isinstance(self.gamma, (int, float)) or not self.gamma > 1:
            errs.append(f"gamma must exceed 1 (got {self.gamma!r})")
        for key in ("trials", "window"):
            v = getattr(self, key)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                errs.append(f"{key} must be a positive integer (got {v!r})")
        if self.edd_trials is not None and (not isinstance(self.edd_trials, int) or self.edd_trials < 1):
            errs.append(f"edd_trials must be a positive integer (got {self.edd_trials!r})")
        if self.cap is not None:
            if not isinstance(self.cap, int) or self.cap < 1:
                errs.append(f"cap must be a positive integer (got {self.cap!r})")
            elif isinstance(self.gamma, (int, float)) and self.cap <= self.gamma:
                errs.append(f"cap ({self.cap}) must exceed gamma ({self.gamma})")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            errs.append(f"seed must be an unsigned 64-bit integer (got {self.seed!r})")
        if not isinstance(self.tolerance, (int, float)) or not 0 < self.tolerance < 1:
            errs.append(f"tolerance must lie in (0, 1) (got {self.tolerance!r})")
        if not self.detectors:
            errs.append("detector list is empty")
        if not self.sweep:
            errs.append("sweep is empty")
        if self.is_hawkes:
            for d in self.detectors:
                text = d["spec"] if isinstance(d, dict) else str(d)
                if text.split("/")[0] not in ("acm", "asr"):
                    errs.append(f"point-process detectors must be acm or asr, got {text!r}")
            try:
                self.scan_config("acm")
            except (ConfigError, TypeError, ValueError, KeyError) as e:
                errs.append(f"hawkes block: {e}")
            for v in self.sweep:
                if not isinstance(v, (int, float)) or not 0 <= v < 1:
                    errs.append(f"hawkes magnitude must lie in [0, 1), got {v!r}")
        else:
            model = None
            try:
                model = self.model_obj()
            except Exception as e:  # noqa: BLE001 - collect, do not stop
                errs.append(f"model: {e}")
            if model is not None:
                try:
                    model.as_natural(self.theta0)
                except Exception as e:  # noqa: BLE001
                    errs.append(f"theta0: {e}")
                for d in self.detectors:
                    try:
                        DetectorSpec.from_string(d["spec"] if isinstance(d, dict) else str(d)).validate(model)
                    except Exception as e:  # noqa: BLE001
                        errs.append(f"detector {d!r}: {e}")
                for v in self.sweep:
                    try:
                        self.alternative(model, v)
                    except Exception as e:  # noqa: BLE001
                        errs.append(f"sweep value {v!r}: {e}")
        if errs:
            raise ConfigError("invalid experiment config:\n  - " + "\n  - ".join(errs))

    # -- alternatives ----------------------------------------------------------------
    def alternative(self, model, value):
        """Post-change natural parameter (or ``rng -> theta`` sampler) for a sweep value."""
        th0 = model.as_natural(self.theta0)
        d = model.dim
        if self.scenario == "table1":
            p = float(value)
            if not 0 < p <= 1:
                raise ConfigError(f"proportion must lie in (0, 1], got {value}")
            k = int(math.ceil(round(d * p, 9)))

            def sparse(rng, k=k):
                th = th0.copy()
                th[rng.choice(d, size=k, replace=False)] = 1.0
                return th

            return sparse
        if self.scenario == "table2":
            beta = float(value)
            if not beta > 0:
                raise ConfigError(f"rate must be positive, got {value}")
            return model.natural_from_classical(beta)
        if self.scenario == "table3":
            n = int(value)
            if n != value or not 0 <= n <= d:
                raise ConfigError(f"edge count must be an integer in [0, {d}], got {value}")
            hi = model.natural_from_classical(0.8)

            def edges(rng, n=n):
                th = th0.copy()
                idx = rng.choice(d, size=n, replace=False)
                th[idx] = np.broadcast_to(hi, th.shape)[idx]
                return th

            return edges
        return model.as_natural(value)


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

def _calibrate_one(cfg: ExperimentConfig, name: str, spec: DetectorSpec, cache: ThresholdCache | None):
    model_id = "hawkes" if cfg.is_hawkes else cfg.model
    det_id = cfg.scan_config(spec.kind).spec if cfg.is_hawkes else spec.spec
    if cache is not None:
        hit = cache.get(det_id, model_id, cfg.gamma, cfg.trials, cfg.seed)
        if hit is not None:
            return hit
    if cfg.is_hawkes:
        sc = cfg.scan_config(spec.kind)
        b, rec, ok = calibrate_runner(hawkes_runner(sc, 0.0, cfg.run_cap, cfg.seed), cfg.gamma,
                                      cfg.tolerance, cfg.trials)
        arl, se, cf = rec.arl(b)
        res = CalibrationResult(float(b), arl, se, cf, cfg.trials, cfg.seed, float(cfg.gamma), bool(ok),
                                det_id, model_id, cfg.run_cap)
    else:
        res = calibrate_threshold(spec, cfg.model_obj(), cfg.theta0, cfg.gamma, cfg.tolerance,
                                  cfg.trials, cfg.seed, cfg.run_cap)
    log.info("calibrated %s: b=%.4f ARL=%.1f (+/- %.1f), censored %.3f%s", name, res.threshold, res.arl,
             res.stderr, res.censor_frac, "" if res.converged else " [not converged]")
    if cache is not None:
        cache.put(res)
    return res


def calibrate_all(cfg: ExperimentConfig, cache: ThresholdCache | None = None) -> dict:
    """Calibration per detector name."""
    cfg.validate()
    return {name: _calibrate_one(cfg, name, spec, cache) for name, spec in cfg.detector_specs()}


def measure_edd(cfg: ExperimentConfig, name: str, spec: DetectorSpec, b: float, value) -> EddResult:
    if cfg.is_hawkes:
        sc = cfg.scan_config(spec.kind)
        rec = hawkes_runner(sc, float(value), cfg.run_cap, cfg.seed, sweep=("edd", value))(b, cfg.n_edd)
        return edd_from_records(rec, b, name, value)
    model = cfg.model_obj()
    return estimate_edd(spec, model, cfg.theta0, b, cfg.alternative(model, value), cfg.n_edd, cfg.seed,
                        cfg.run_cap, param=value)


def edd_rows(cfg: ExperimentConfig, calibrations: dict) -> list[dict]:
    rows = []
    for name, spec in cfg.detector_specs():
        if name not in calibrations:
            raise ConfigError(f"no calibration for detector {name!r}")
        cal = calibrations[name]
        for value in cfg.sweep:
            e = measure_edd(cfg, name, spec, cal.threshold, value)
            log.info("%s %s=%s: EDD %.3f (+/- %.3f), censored %.3f", name, cfg.scenario, value,
                     e.edd_mean, e.edd_stderr, e.censor_frac)
            rows.append({
                "scenario": cfg.scenario, "param": value, "detector": name,
                "estimator": "sgd" if cfg.is_hawkes else spec.estimator,
                "gamma": cfg.gamma, "threshold": cal.threshold,
                "edd_mean": e.edd_mean, "edd_stderr": e.edd_stderr, "trials": e.trials,
                "censor_frac": e.censor_frac, "seed": cfg.seed,
            })
    return rows


def run_experiment(cfg: ExperimentConfig, cache: ThresholdCache | None = None) -> list[dict]:
    """Calibrate every detector (or reuse the cache) and measure EDD over the sweep."""
    return edd_rows(cfg, calibrate_all(cfg, cache))


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(round(v, 10))
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def save_calibrations(calibrations: dict, path) -> None:
    data = {name: c.to_dict() for name, c in calibrations.items()}
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def load_calibrations(path) -> dict:
    raw = json.loads(Path(path).read_text())
    return {name: CalibrationResult.from_dict(v) for name, v in raw.items()}
