"""Threshold calibration to a target ARL and detection-delay estimation.

All estimates come from :class:`~omdcpd.bench.engine.PathRecords`, so one
simulation answers the run-length question for every threshold below its
stop level.  Bisection probes therefore reuse identical sample paths and the
estimated ARL is monotone in the threshold.

A *runner* is any callable ``runner(stop_level, n) -> PathRecords`` that
simulates the first ``n`` trials of a fixed seed family.  The i.i.d. models get
one from :func:`iid_runner`; the point-process module supplies its own.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ..detectors import DetectorSpec
from ..errors import ConfigError
from .engine import IidSource, PathRecords, run_paths, trial_seeds

log = logging.getLogger(__name__)

Runner = Callable[[float, int], PathRecords]


@dataclass(frozen=True)
class CalibrationResult:
    """A threshold together with the Monte-Carlo evidence behind it."""

    threshold: float
    arl: float
    stderr: float
    censor_frac: float
    trials: int
    seed: int
    gamma: float
    converged: bool = True
    detector: str = ""
    model: str = ""
    cap: int = 0

    @property
    def half_width(self) -> float:
        """95% normal-approximation half-width of the ARL estimate."""
        return 1.96 * self.stderr

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class EddResult:
    detector: str
    param: object
    edd_mean: float
    edd_stderr: float
    trials: int
    threshold: float
    censor_frac: float = 0.0


def iid_runner(spec: DetectorSpec, model, theta0, cap: int, seed: int, sweep="null",
               theta=None, backend: str = "compiled") -> Runner:
    """Runner for i.i.d. data at ``theta`` (the null ``theta0`` by default)."""
    source = IidSource(model, theta0 if theta is None else theta)

    def run(stop_level, n):
        seeds = trial_seeds(seed, spec.spec, sweep, n)
        return run_paths(spec, model, theta0, source, seeds, cap, stop_level, backend=backend)

    return run


# ---------------------------------------------------------------------------
# ARL
# ---------------------------------------------------------------------------

def estimate_arl(spec: DetectorSpec, model, theta0, b: float, trials: int, cap: int, seed: int = 0):
    """(mean run length, standard error, censored fraction) under the null.

    Censored runs count as ``cap``, so the mean is biased low when the
    censored fraction is not small.
    """
    if trials < 1:
        raise ConfigError("estimate_arl needs at least one trial")
    rec = iid_runner(spec, model, theta0, cap, seed)(b, trials)
    return rec.arl(b)


def _slope(rec: PathRecords, s: float) -> float:
    """d log ARL / d b near ``s`` from the records, with a fallback guess."""
    lo = s - min(1.0, max(s, 0.5) / 2)
    a_hi = rec.arl(s)[0]
    a_lo = rec.arl(lo)[0]
    slope = (math.log(a_hi) - math.log(a_lo)) / (s - lo)
    return slope if slope > 0.05 else 0.5


def _smallest_reaching(rec: PathRecords, level: float, hi: float) -> float:
    """Smallest record value b <= hi with ARL(b) >= level (hi if none smaller)."""
    cand = np.unique(rec.value[(rec.value <= hi) & (rec.value >= 0)])
    best = hi
    # ARL is nondecreasing in b, so binary search over the candidate grid
    lo_i, hi_i = 0, len(cand) - 1
    while lo_i <= hi_i:
        mid = (lo_i + hi_i) // 2
        if rec.arl(cand[mid])[0] >= level:
            best = float(cand[mid])
            hi_i = mid - 1
        else:
            lo_i = mid + 1
    return best


def calibrate_runner(runner: Runner, gamma: float, tolerance: float = 0.05, trials: int = 2000,
                     b_start: float | None = None, max_rounds: int = 12, max_iter: int = 100):
    """Calibrate a threshold so that the estimated ARL is within ``tolerance`` of ``gamma``.

    Returns ``(threshold, records, converged)``.

    The search runs in three stages.  A pilot with a tenth of the trials
    raises the stop level until the pilot ARL clears ``1.3 * gamma``.  The
    full set of trials is then simulated once up to that level (raised
    further if the full estimate falls short).  Finally bisection on the
    recorded paths finds the threshold.  ARL estimates are step functions of
    the threshold; when no threshold lands inside the tolerance band the
    smallest threshold whose ARL reaches ``gamma`` is returned with
    ``converged=False``.
    """
    if not gamma > 1:
        raise ConfigError(f"target ARL must exceed 1, got {gamma}")
    if trials < 1:
        raise ConfigError("calibration needs at least one trial")
    if not 0 < tolerance < 1:
        raise ConfigError("tolerance must lie in (0, 1)")
    upper = 1.3 * gamma
    s = max(math.log(gamma), 1.0) if b_start is None else float(b_start)

    n_pilot = min(trials, max(100, trials // 10))
    for _ in range(max_rounds):
        rec = runner(s, n_pilot)
        arl, _, cf = rec.arl(s)
        if arl >= upper or cf > 0.5:
            break
        step = math.log(upper / arl) / _slope(rec, s)
        s = float(np.clip(s + step, s + 0.5, 2 * s + 1))
        log.debug("pilot stop level raised to %.3f (ARL %.1f)", s, arl)
    s = rec.stop_level  # the last raise may not have been simulated
    if rec.arl(s)[0] >= upper:
        s = _smallest_reaching(rec, upper, s)

    for _ in range(max_rounds):
        rec = runner(s, trials)
        arl, _, cf = rec.arl(s)
        if arl >= gamma * (1 + tolerance) or cf > 0.5:
            break
        step = math.log(upper / arl) / _slope(rec, s)
        s = float(np.clip(s + step, s + 0.5, 2 * s + 1))
        log.debug("stop level raised to %.3f (ARL %.1f)", s, arl)
    s = rec.stop_level

    def ok(b):
        return abs(rec.arl(b)[0] - gamma) / gamma <= tolerance

    hi = s
    if rec.arl(hi)[0] < gamma:
        return hi, rec, ok(hi)
    lo = 0.0 if rec.arl(0.0)[0] < gamma else -1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        a = rec.arl(mid)[0]
        if abs(a - gamma) / gamma <= tolerance:
            return mid, rec, True
        if a < gamma:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-10:
            break
    return hi, rec, ok(hi)


def calibrate_threshold(spec: DetectorSpec, model, theta0, gamma: float, tolerance: float = 0.05,
                        trials: int = 2000, seed: int = 0, cap: int | None = None,
                        backend: str = "compiled") -> CalibrationResult:
    """Monte-Carlo threshold for ``spec`` at target ARL ``gamma``.

    Deterministic given ``seed``.  ``cap`` defaults to ``20 * gamma``.
    """
    cap = int(20 * gamma) if cap is None else int(cap)
    runner = iid_runner(spec, model, theta0, cap, seed, backend=backend)
    b, rec, converged = calibrate_runner(runner, gamma, tolerance, trials)
    arl, se, cf = rec.arl(b)
    return CalibrationResult(float(b), arl, se, cf, trials, int(seed), float(gamma), bool(converged),
                             spec.spec, model.spec, cap)


# ---------------------------------------------------------------------------
# detection delay
# ---------------------------------------------------------------------------

def edd_from_records(rec: PathRecords, b: float, detector: str, param) -> EddResult:
    T, censored = rec.stopping_times(b)
    se = float(T.std(ddof=1) / np.sqrt(len(T))) if len(T) > 1 else 0.0
    return EddResult(detector, param, float(T.mean()), se, len(T), float(b), float(censored.mean()))


def estimate_edd(spec: DetectorSpec, model, theta0, b: float, theta, trials: int, seed: int = 0,
                 cap: int = 20000, param=None, backend: str = "compiled") -> EddResult:
    """Mean alarm time with the change at time zero (data from ``theta`` from t = 1).

    ``theta`` may be a callable ``rng -> theta`` for per-trial random
    alternatives.  Runs that reach ``cap`` count as ``cap`` and are reported in
    ``censor_frac``.
    """
    if trials < 1:
        raise ConfigError("estimate_edd needs at least one trial")
    sweep = ("edd", param if param is not None else repr(theta))
    rec = iid_runner(spec, model, theta0, cap, seed, sweep=sweep, theta=theta, backend=backend)(b, trials)
    return edd_from_records(rec, b, spec.name, param)


# ---------------------------------------------------------------------------
# threshold cache
# ---------------------------------------------------------------------------

class ThresholdCache:
    """JSON file of calibrations keyed by (detector, model, gamma, trials, seed)."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.entries: dict[str, CalibrationResult] = {}
        if self.path is not None and self.path.exists():
            raw = json.loads(self.path.read_text())
            self.entries = {k: CalibrationResult.from_dict(v) for k, v in raw.items()}

    @staticmethod
    def key(detector: str, model: str, gamma: float, trials: int, seed: int) -> str:
        return f"{detector}|{model}|{gamma:g}|{trials}|{seed}"

    def get(self, *key):
        return self.entries.get(self.key(*key))

    def put(self, result: CalibrationResult):
        k = self.key(result.detector, result.model, result.gamma, result.trials, result.seed)
        self.entries[k] = result
        self.save()

    def save(self):
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        data = {k: v.to_dict() for k, v in sorted(self.entries.items())}
        self.path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
