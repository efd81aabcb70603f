"""Poisson-to-Hawkes change detection on event streams.

Events are scanned at their own arrival times.  Scan ``i`` looks at the
events in the window ``(T_i - L, T_i]`` and scores them with the windowed
Hawkes log-likelihood

    l(theta | X_i) = sum_q log(lam0 + theta * A_q) - lam0 * L - theta * C,

    A_q = sum_{T_i - L < t_j < t_q} beta * exp(-beta (t_q - t_j)),
    C   = sum_q (1 - exp(-beta (T_i - t_q))).

``A`` and ``C`` depend on the window only, so every branch estimate is scored
from the same two summaries.  Branches hold a magnitude estimate moved by one
projected stochastic-gradient ascent step per scan, and the ACM / ASR
statistics combine the branch log ratios ``l(theta_hat | X) - l(0 | X)``
exactly as in :mod:`omdcpd.detectors`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit
from scipy.special import logsumexp

from .detectors import Alarm
from .errors import ConfigError, InvalidParameterError, NumericDomainError

MAGNITUDE_EPS = 1e-6


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EventStream:
    """Strictly increasing event times on ``[0, horizon]``."""

    times: np.ndarray
    horizon: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        if not self.horizon > 0:
            raise InvalidParameterError(f"horizon must be positive, got {self.horizon}")
        if t.size and (t[0] < 0 or t[-1] > self.horizon):
            raise InvalidParameterError("event times must lie in [0, horizon]")
        if np.any(np.diff(t) <= 0):
            raise InvalidParameterError("event times must be strictly increasing")
        object.__setattr__(self, "times", t)

    def __len__(self):
        return len(self.times)

    @classmethod
    def from_lines(cls, lines, horizon=None):
        vals = [float(s) for s in (ln.strip() for ln in lines) if s and not s.startswith("#")]
        t = np.array(vals, dtype=float)
        hz = float(horizon) if horizon is not None else (float(t[-1]) if len(t) else 1.0)
        return cls(t, hz if hz > 0 else 1.0)

    @classmethod
    def read(cls, path, horizon=None):
        """One event time per line, ascending."""
        return cls.from_lines(Path(path).read_text().splitlines(), horizon)


@dataclass(frozen=True)
class HawkesSpec:
    """Baseline ``baseline`` (lam0), kernel ``decay * exp(-decay s)`` scaled by
    ``magnitude`` after ``change_time`` (never, if None)."""

    baseline: float = 1.0
    decay: float = 1.0
    magnitude: float = 0.0
    change_time: float | None = None

    def __post_init__(self):
        if not self.baseline > 0 or not self.decay > 0:
            raise InvalidParameterError("baseline and decay must be positive")
        if not 0 <= self.magnitude < 1:
            raise InvalidParameterError(
                f"magnitude must lie in [0, 1) for a stationary process, got {self.magnitude}"
            )


@dataclass(frozen=True)
class ScanConfig:
    """Tuning of the windowed scan.  ``length`` defaults to ``10 / baseline``."""

    kind: str = "acm"
    baseline: float = 1.0
    decay: float = 1.0
    length: float | None = None
    step: float = 0.05
    window: int = 100

    def __post_init__(self):
        if self.kind not in ("acm", "asr"):
            raise ConfigError(f"point-process scan supports acm and asr, not {self.kind!r}")
        if not self.baseline > 0 or not self.decay > 0:
            raise ConfigError("baseline and decay must be positive")
        if self.length is None:
            object.__setattr__(self, "length", 10.0 / self.baseline)
        if not self.length > 0 or not self.step > 0:
            raise ConfigError("window length and step size must be positive")
        if int(self.window) < 1:
            raise ConfigError("branch window must be >= 1")

    @property
    def spec(self) -> str:
        return f"{self.kind}/sgd:{self.step:g}/L={self.length:g}/w={self.window}"


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@njit(cache=True)
def _hawkes_times(rng, lam0, beta, theta, kappa, horizon, max_events):
    out = np.empty(max_events)
    n = 0
    s = 0.0
    excite = 0.0  # sum over accepted post-change events of beta * exp(-beta (s - t_j))
    while n < max_events:
        if s < kappa:
            u = s + rng.exponential(1.0 / lam0)
            if u >= kappa:
                s = kappa  # memoryless restart at the change
                continue
            if u > horizon:
                break
            out[n] = u
            n += 1
            s = u
            continue
        lam_bar = lam0 + theta * excite  # intensity only decays until the next event
        u = s + rng.exponential(1.0 / lam_bar)
        if u > horizon:
            break
        excite *= math.exp(-beta * (u - s))
        s = u
        if rng.random() * lam_bar <= lam0 + theta * excite:
            out[n] = u
            n += 1
            excite += beta
    return out[:n]


def simulate_poisson(rate: float, horizon: float, rng) -> EventStream:
    """Homogeneous Poisson arrivals on [0, horizon]."""
    if not rate > 0:
        raise InvalidParameterError("rate must be positive")
    n = rng.poisson(rate * horizon)
    return EventStream(np.sort(rng.uniform(0.0, horizon, size=n)), horizon)


def simulate_hawkes(spec: HawkesSpec, horizon: float, rng, max_events: int = 10**7) -> EventStream:
    """Ogata thinning: Poisson(baseline) before the change, self-exciting after it.

    Only events after the change excite later ones.
    """
    kappa = np.inf if spec.change_time is None else float(spec.change_time)
    t = _hawkes_times(rng, spec.baseline, spec.decay, spec.magnitude, kappa, float(horizon), int(max_events))
    return EventStream(t, horizon)


def hawkes_event_times(spec: HawkesSpec, n_events: int, rng) -> np.ndarray:
    """The first ``n_events`` event times on an unbounded horizon."""
    kappa = np.inf if spec.change_time is None else float(spec.change_time)
    return _hawkes_times(rng, spec.baseline, spec.decay, spec.magnitude, kappa, np.inf, int(n_events))


# ---------------------------------------------------------------------------
# window likelihood
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowSummary:
    """Excitation terms ``A`` (one per event) and compensator sum ``C`` of a window."""

    A: np.ndarray
    C: float
    length: float

    @property
    def count(self) -> int:
        return len(self.A)


def window_events(times, end: float, length: float):
    t = np.asarray(times, dtype=float)
    return t[(t > end - length) & (t <= end)]


def window_summary(events, end: float, length: float, decay: float) -> WindowSummary:
    """Summaries of the events in ``(end - length, end]``; earlier events are ignored."""
    ev = window_events(events, end, length)
    if ev.size == 0:
        return WindowSummary(np.zeros(0), 0.0, float(length))
    s = ev - end  # in (-length, 0]; keeps the exponentials bounded
    grow = np.exp(decay * s)
    prior = np.concatenate([[0.0], np.cumsum(grow)[:-1]])
    A = decay * np.exp(-decay * s) * prior
    C = float(np.sum(1.0 - np.exp(-decay * (end - ev))))
    return WindowSummary(A, C, float(length))


def _as_summary(events, end, length, decay):
    if isinstance(events, WindowSummary):
        return events
    if end is None:
        raise InvalidParameterError("window end time is required with raw events")
    return window_summary(events, end, length, decay)


def window_loglik(events, theta, baseline: float, decay: float, end: float | None = None,
                  length: float | None = None):
    """Windowed Hawkes log-likelihood; ``theta`` may be an array of magnitudes."""
    length = 10.0 / baseline if length is None else length
    w = _as_summary(events, end, length, decay)
    th = np.asarray(theta, dtype=float)
    arg = baseline + th[..., None] * w.A
    if np.any(arg <= 0):
        raise NumericDomainError("nonpositive intensity inside the window")
    return np.sum(np.log(arg), axis=-1) - baseline * w.length - th * w.C


def window_loglik_grad(events, theta, baseline: float, decay: float, end: float | None = None,
                       length: float | None = None):
    """Derivative of :func:`window_loglik` with respect to the magnitude."""
    length = 10.0 / baseline if length is None else length
    w = _as_summary(events, end, length, decay)
    th = np.asarray(theta, dtype=float)
    arg = baseline + th[..., None] * w.A
    if np.any(arg <= 0):
        raise NumericDomainError("nonpositive intensity inside the window")
    return np.sum(w.A / arg, axis=-1) - w.C


def window_log_ratio(summary: WindowSummary, theta, baseline: float):
    """l(theta | X) - l(0 | X); the baseline compensator cancels."""
    th = np.asarray(theta, dtype=float)
    return np.sum(np.log1p(th[..., None] * summary.A / baseline), axis=-1) - th * summary.C


def sgd_branch_update(theta_hat, summary: WindowSummary, baseline: float, step: float):
    """One ascent step on the window log-likelihood, projected to [0, 1 - eps]."""
    if not step > 0:
        raise ConfigError("SGD step must be positive")
    g = window_loglik_grad(summary, theta_hat, baseline, decay=1.0)
    return np.clip(np.asarray(theta_hat, dtype=float) + step * g, 0.0, 1.0 - MAGNITUDE_EPS)


# ---------------------------------------------------------------------------
# streaming detector
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointProcessDetectorState:
    config: ScanConfig
    threshold: float
    ks: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    thetas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    log_lambdas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    t: int = 0
    statistic: float = 0.0
    argmax_k: int | None = None


def pointproc_init(config: ScanConfig, threshold: float) -> PointProcessDetectorState:
    return PointProcessDetectorState(config=config, threshold=float(threshold))


def pointproc_detector_step(state: PointProcessDetectorState, summary: WindowSummary, b: float | None = None):
    """Advance every branch by one scan window.

    The branch for k = t enters at magnitude 0, scores the window (a zero
    increment), then takes its first gradient step.  At most ``window``
    branches are held.
    """
    cfg = state.config
    b = state.threshold if b is None else float(b)
    t = state.t + 1
    ks = np.append(state.ks, t)[-cfg.window:]
    th = np.append(state.thetas, 0.0)[-cfg.window:]
    ll = np.append(state.log_lambdas, 0.0)[-cfg.window:]
    ll = ll + window_log_ratio(summary, th, cfg.baseline)
    th = sgd_branch_update(th, summary, cfg.baseline, cfg.step)
    if cfg.kind == "acm":
        i = int(np.argmax(ll))
        stat, khat = float(ll[i]), int(ks[i])
    else:
        stat, khat = float(logsumexp(ll)), None
    new = replace(state, ks=ks, thetas=th, log_lambdas=ll, t=t, statistic=stat, argmax_k=khat, threshold=b)
    return new, Alarm(stat > b, t, stat, khat)


def scan_events(times, config: ScanConfig, threshold: float):
    """Yield one :class:`Alarm` per event; windows end at the event times."""
    times = np.asarray(times, dtype=float)
    state = pointproc_init(config, threshold)
    lo = 0
    for i, T in enumerate(times):
        while times[lo] <= T - config.length:
            lo += 1
        summary = window_summary(times[lo:i + 1], T, config.length, config.decay)
        state, alarm = pointproc_detector_step(state, summary)
        yield alarm


# ---------------------------------------------------------------------------
# Monte-Carlo
# ---------------------------------------------------------------------------

@njit(cache=True)
def _scan_records(times, lam0, beta, length, step, w, lse, stop_level):
    """Running-maximum records of the scan statistic along one event path."""
    n = len(times)
    theta = np.zeros(w)
    loglam = np.zeros(w)
    A = np.empty(n)
    rec_t = np.empty(n, dtype=np.int64)
    rec_v = np.empty(n)
    nrec = 0
    runmax = -np.inf
    lo = 0
    for i in range(n):
        T = times[i]
        while times[lo] <= T - length:
            lo += 1
        m = i - lo + 1
        C = 0.0
        for q in range(m):
            tq = times[lo + q]
            if q == 0:
                A[q] = 0.0
            else:
                A[q] = math.exp(-beta * (tq - times[lo + q - 1])) * (A[q - 1] + beta)
            C += 1.0 - math.exp(-beta * (T - tq))
        t = i + 1
        slot = (t - 1) % w
        theta[slot] = 0.0
        loglam[slot] = 0.0
        nb = t if t < w else w
        best = -np.inf
        for k in range(nb):
            th = theta[k]
            inc = -th * C
            g = -C
            for q in range(m):
                inc += math.log1p(th * A[q] / lam0)
                g += A[q] / (lam0 + th * A[q])
            loglam[k] += inc
            nt = th + step * g
            theta[k] = min(max(nt, 0.0), 1.0 - 1e-6)
            if loglam[k] > best:
                best = loglam[k]
        stat = best
        if lse:
            acc = 0.0
            for k in range(nb):
                acc += math.exp(loglam[k] - best)
            stat = best + math.log(acc)
        if stat > runmax:
            runmax = stat
            rec_t[nrec] = t
            rec_v[nrec] = stat
            nrec += 1
        if stat > stop_level:
            break
    return rec_t[:nrec], rec_v[:nrec]


def scan_records(times, config: ScanConfig, stop_level: float):
    return _scan_records(np.asarray(times, dtype=float), config.baseline, config.decay, config.length,
                         config.step, int(config.window), config.kind == "asr", float(stop_level))


def hawkes_runner(config: ScanConfig, magnitude: float, cap: int, seed: int, sweep="null"):
    """Runner (see :mod:`omdcpd.bench.calibration`) over Hawkes paths changing at time 0.

    ``magnitude=0`` gives the Poisson null.  Each path draws ``cap`` events up
    front from its own generator, so results do not depend on the stop level.
    """
    from .bench.engine import PathRecords, trial_seeds

    spec = HawkesSpec(config.baseline, config.decay, magnitude, change_time=0.0)

    def run(stop_level, n):
        seeds = trial_seeds(seed, config.spec, sweep, n)
        ps, ts, vs = [], [], []
        for i, ss in enumerate(seeds):
            rng = np.random.Generator(np.random.PCG64(ss))
            times = hawkes_event_times(spec, cap, rng)
            rt, rv = scan_records(times, config, stop_level)
            ps.append(np.full(len(rt), i, dtype=np.int64))
            ts.append(rt)
            vs.append(rv)
        return PathRecords(np.concatenate(ps), np.concatenate(ts), np.concatenate(vs), n, int(cap),
                           float(stop_level), False)

    return run
