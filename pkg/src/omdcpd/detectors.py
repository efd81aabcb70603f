"""Streaming stopping rules.

One state object per stream, advanced one observation at a time by a pure
step function that returns the new state and an :class:`Alarm`.  All
likelihood ratios live in the log domain.

* SPRT: a single plug-in likelihood ratio started at t = 1; stops on ``>= b``.
* ACM / ASR: one branch per hypothetical change point k in the last ``w``
  steps; the statistic is the max (ACM) or log-sum-exp (ASR) of the branch
  log ratios; stops on ``> b``.
* CUSUM with a pre-specified post-change parameter, and the window-limited
  GLR that refits the MLE on every suffix of the retained samples.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError
from .estimators import (
    FixedState,
    MomState,
    OmdEstimatorState,
    ShrinkState,
    StepSchedule,
    batch_mle,
    omd_init,
    omd_step,
)
from .expfam import ExponentialFamilyModel, GammaFixedShape, GaussianIdentity, _log_ratio
from .projection import FeasibleSet, FullSpace, check_compatible, feasible_set_from_spec

KINDS = ("sprt", "acm", "asr", "cusum", "glr")


@dataclass(frozen=True)
class Alarm:
    stopped: bool
    stop_time: int
    statistic: float
    change_point_estimate: int | None = None


# ---------------------------------------------------------------------------
# detector specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DetectorSpec:
    """What to run: a stopping rule, its estimator and the estimator's constraints.

    ``estimator`` is one of ``"omd"``, ``"mom"``, ``"shrink:<mode>,<thr>"``
    (``thr`` may be ``auto``), ``"fixed:<theta>"`` / ``"fixed:classical=<v>"``
    or ``"glr-window"``.
    """

    kind: str
    estimator: str = "omd"
    feasible_set: FeasibleSet = field(default_factory=FullSpace)
    schedule: StepSchedule = field(default_factory=StepSchedule)
    window: int | None = 100
    name: str | None = None

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ConfigError(f"unknown detector kind {self.kind!r}; expected one of {KINDS}")
        if self.window is not None and int(self.window) < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        est = self.estimator.lower()
        if kind == "glr":
            est = "glr-window"
        elif kind == "cusum" and not est.startswith("fixed"):
            raise ConfigError("CUSUM needs a fixed post-change parameter, e.g. 'fixed:1'")
        elif est == "glr-window":
            raise ConfigError("the glr-window estimator belongs to the 'glr' kind")
        elif est.split(":")[0] not in ("omd", "mom", "shrink", "fixed"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        object.__setattr__(self, "estimator", est)
        if self.name is None:
            object.__setattr__(self, "name", self.spec)

    @property
    def spec(self) -> str:
        parts = [self.kind]
        if self.kind not in ("glr",):
            parts.append(self.estimator)
        if not isinstance(self.feasible_set, FullSpace):
            parts.append(self.feasible_set.spec)
        if not self.schedule.harmonic:
            parts.append(self.schedule.spec)
        if self.kind != "sprt" and self.window is not None and self.window != 100:
            parts.append(f"w={self.window}")
        elif self.kind != "sprt" and self.window is None:
            parts.append("w=inf")
        return "/".join(parts)

    @classmethod
    def from_string(cls, text: str, name: str | None = None) -> "DetectorSpec":
        """Parse ``"acm/omd/l1:5"``, ``"cusum/fixed:1"``, ``"glr/w=50"``, ...

        Fields after the kind may come in any order: an estimator, a feasible
        set (``full``, ``l1:s``, ``clamp:lo,hi``), a step schedule
        (``harmonic``, ``shifted:c``) and a window ``w=<int>`` or ``w=inf``.
        """
        fields = [f for f in text.strip().split("/") if f]
        if not fields:
            raise ConfigError("empty detector spec")
        kw: dict = {"kind": fields[0]}
        for f in fields[1:]:
            head = f.split(":")[0].lower()
            if f.lower().startswith("w="):
                val = f[2:]
                kw["window"] = None if val.lower() in ("inf", "none") else int(val)
            elif head in ("full", "l1", "clamp"):
                kw["feasible_set"] = feasible_set_from_spec(f)
            elif head in ("harmonic", "shifted"):
                kw["schedule"] = StepSchedule.from_spec(f)
            else:
                kw["estimator"] = f
        return cls(name=name, **kw)

    def fixed_theta(self, model: ExponentialFamilyModel):
        """Post-change parameter encoded in a ``fixed:`` estimator."""
        if not self.estimator.startswith("fixed:"):
            raise ConfigError(f"{self.spec} has no fixed parameter")
        arg = self.estimator.split(":", 1)[1]
        if arg.startswith("classical="):
            vals = [float(v) for v in arg.split("=", 1)[1].split(",")]
            return model.natural_from_classical(vals[0] if len(vals) == 1 else vals)
        if arg.startswith("natural="):
            arg = arg.split("=", 1)[1]
        vals = [float(v) for v in arg.split(",")]
        return model.as_natural(vals[0] if len(vals) == 1 else vals)

    def shrink_params(self):
        arg = self.estimator.partition(":")[2] or "soft,auto"
        mode, _, thr = arg.partition(",")
        thr = thr or "auto"
        return mode, None if thr == "auto" else float(thr)

    def validate(self, model: ExponentialFamilyModel) -> None:
        check_compatible(model, self.feasible_set)
        if self.estimator == "mom" and not isinstance(model, GammaFixedShape):
            raise ConfigError("the MOM estimator is defined for the gamma family only")
        if self.estimator.startswith("shrink") and not isinstance(model, GaussianIdentity):
            raise ConfigError("the shrinkage estimator is defined for the Gaussian family only")
        if self.estimator.startswith("fixed"):
            self.fixed_theta(model)
        if self.estimator.startswith("shrink"):
            self.shrink_params()


def new_estimator(spec: DetectorSpec, model, theta0):
    """Estimator state for a fresh branch, sitting at the null parameter."""
    est = spec.estimator
    if est == "omd":
        return omd_init(model, theta0, spec.feasible_set, spec.schedule)
    if est == "mom":
        # prior pseudo-counts centred on the null rate
        return MomState(c0=1.0, s0=1.0 / float(-np.asarray(theta0).reshape(-1)[0]))
    if est.startswith("shrink"):
        mode, thr = spec.shrink_params()
        return ShrinkState(theta0=np.asarray(theta0, float), mode=mode, threshold=thr)
    if est.startswith("fixed"):
        return FixedState(spec.fixed_theta(model))
    raise ConfigError(f"estimator {est!r} cannot drive a branch")


# ---------------------------------------------------------------------------
# one-sided SPRT
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SprtState:
    log_lambda: float = 0.0
    estimator: OmdEstimatorState | None = None
    t: int = 0


def sprt_init(model, theta0, feasible_set=None, schedule=None) -> SprtState:
    return SprtState(estimator=omd_init(model, theta0, feasible_set, schedule))


def sprt_step(state: SprtState, model, theta0, x, b: float):
    """Score x with the current estimate, then update the estimate."""
    inc = float(_log_ratio(model, state.estimator.theta_hat, theta0, x))
    est = omd_step(state.estimator, model, x)
    new = SprtState(log_lambda=state.log_lambda + inc, estimator=est, t=state.t + 1)
    return new, Alarm(new.log_lambda >= b, new.t, new.log_lambda)


# ---------------------------------------------------------------------------
# ACM / ASR
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BranchState:
    k: int
    log_lambda: float
    estimator: object


@dataclass(frozen=True)
class ChangeDetectorState:
    spec: DetectorSpec
    threshold: float
    branches: tuple = ()
    t: int = 0
    statistic: float = 0.0
    argmax_k: int | None = None

    @property
    def kind(self):
        return self.spec.kind

    @property
    def window(self):
        return self.spec.window


def detector_init(spec: DetectorSpec, threshold: float) -> ChangeDetectorState:
    if spec.kind not in ("acm", "asr"):
        raise ConfigError(f"detector_step drives ACM/ASR, not {spec.kind}")
    return ChangeDetectorState(spec=spec, threshold=float(threshold))


def detector_step(state: ChangeDetectorState, model, theta0, x):
    """Advance every branch by one observation.

    A new branch for k = t enters at the null parameter before scoring, so its
    own first increment is exactly zero and its estimator starts from X_t.
    The oldest branch leaves once more than ``w`` are held.
    """
    t = state.t + 1
    spawned = BranchState(k=t, log_lambda=0.0, estimator=new_estimator(state.spec, model, theta0))
    branches = state.branches + (spawned,)
    w = state.spec.window
    if w is not None and len(branches) > w:
        branches = branches[len(branches) - w:]
    updated = []
    for br in branches:
        inc = float(_log_ratio(model, br.estimator.theta, theta0, x))
        updated.append(BranchState(br.k, br.log_lambda + inc, br.estimator.update(model, x)))
    logs = np.array([br.log_lambda for br in updated])
    if state.kind == "acm":
        i = int(np.argmax(logs))
        stat, khat = float(logs[i]), updated[i].k
    else:
        stat, khat = float(logsumexp(logs)), None
    new = replace(state, branches=tuple(updated), t=t, statistic=stat, argmax_k=khat)
    return new, Alarm(stat > state.threshold, t, stat, khat)


# ---------------------------------------------------------------------------
# CUSUM and window-limited GLR
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CusumState:
    threshold: float
    W: float = 0.0
    t: int = 0


def cusum_step(state: CusumState, model, theta0, theta1, x):
    if np.array_equal(np.asarray(theta0), np.asarray(theta1)):
        raise ConfigError("CUSUM post-change parameter equals the null parameter")
    W = max(state.W + float(_log_ratio(model, theta1, theta0, x)), 0.0)
    new = replace(state, W=W, t=state.t + 1)
    return new, Alarm(W > state.threshold, new.t, W)


@dataclass(frozen=True)
class GlrState:
    threshold: float
    window: int | None = 100
    samples: tuple = ()
    t: int = 0
    statistic: float = 0.0
    argmax_k: int | None = None


def glr_suffix_statistic(model, theta0, samples):
    """Log ratio of the suffix MLE against the null, summed over the suffix."""
    theta_hat = batch_mle(model, samples).theta
    return float(np.sum(_log_ratio(model, theta_hat, theta0, np.asarray(samples, float))))


def glr_step(state: GlrState, model, theta0, x, w: int | None = None):
    """Refit the MLE on every suffix of the retained window and take the max."""
    w = state.window if w is None else w
    t = state.t + 1
    samples = state.samples + (np.asarray(x, dtype=float),)
    if w is not None and len(samples) > w:
        samples = samples[len(samples) - w:]
    first_k = t - len(samples) + 1
    best, khat = -np.inf, None
    for j in range(len(samples)):
        val = glr_suffix_statistic(model, theta0, np.stack(samples[j:]))
        if val > best:
            best, khat = val, first_k + j
    new = replace(state, samples=samples, t=t, statistic=best, argmax_k=khat, window=w)
    return new, Alarm(best > state.threshold, t, best, khat)


# ---------------------------------------------------------------------------
# object wrapper
# ---------------------------------------------------------------------------

class Detector:
    """Stateful convenience wrapper around the step functions.

    >>> from omdcpd.expfam import GaussianIdentity
    >>> det = Detector(DetectorSpec("acm"), GaussianIdentity(1), theta0=0.0, threshold=5.0)
    >>> det.update([0.1]).stopped
    False
    """

    def __init__(self, spec: DetectorSpec | str, model: ExponentialFamilyModel, theta0, threshold: float):
        if isinstance(spec, str):
            spec = DetectorSpec.from_string(spec)
        spec.validate(model)
        self.spec = spec
        self.model = model
        self.theta0 = model.as_natural(theta0)
        self.threshold = float(threshold)
        self.reset()

    def reset(self):
        spec, b = self.spec, self.threshold
        if spec.kind == "sprt":
            self.state = sprt_init(self.model, self.theta0, spec.feasible_set, spec.schedule)
        elif spec.kind in ("acm", "asr"):
            self.state = detector_init(spec, b)
        elif spec.kind == "cusum":
            self.theta1 = spec.fixed_theta(self.model)
            self.state = CusumState(threshold=b)
        else:
            self.state = GlrState(threshold=b, window=spec.window)

    @property
    def statistic(self) -> float:
        s = self.state
        return s.log_lambda if isinstance(s, SprtState) else (s.W if isinstance(s, CusumState) else s.statistic)

    def update(self, x) -> Alarm:
        kind = self.spec.kind
        if kind == "sprt":
            self.state, alarm = sprt_step(self.state, self.model, self.theta0, x, self.threshold)
        elif kind in ("acm", "asr"):
            self.state, alarm = detector_step(self.state, self.model, self.theta0, x)
        elif kind == "cusum":
            self.state, alarm = cusum_step(self.state, self.model, self.theta0, self.theta1, x)
        else:
            self.state, alarm = glr_step(self.state, self.model, self.theta0, x)
        return alarm

    def run(self, samples) -> Alarm:
        """Feed samples until the first alarm; returns the last alarm record."""
        alarm = Alarm(False, 0, self.statistic)
        for x in samples:
            alarm = self.update(x)
            if alarm.stopped:
                break
        return alarm
