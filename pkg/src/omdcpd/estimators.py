"""Non-anticipating estimators of the post-change parameter.

The mirror-descent estimator is the one-sample update: move the mean
parameter toward the newest sufficient statistic, map back to natural
coordinates, project onto the feasible set.  Batch MLE, a method-of-moments
rate estimator and coordinatewise shrinkage serve as baselines and oracles.

Array-level kernels (``omd_update``, ``mom_theta``, ``shrink_theta``) accept any
leading shape and are shared by the streaming states defined here and by the
vectorised Monte-Carlo engine.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, IdentityNotApplicable, InvalidParameterError, NumericDomainError
from .expfam import (
    BERNOULLI_EPS,
    GAMMA_EPS,
    BernoulliProduct,
    ExponentialFamilyModel,
    GammaFixedShape,
    _bregman_dual,
)
from .projection import FeasibleSet, FullSpace, bregman_project, check_compatible


@dataclass(frozen=True)
class StepSchedule:
    """eta_t = 1 / (t + offset).  ``offset=0`` is the harmonic schedule."""

    offset: float = 0.0

    def __post_init__(self):
        if self.offset < 0:
            raise ConfigError("step-schedule offset must be nonnegative")

    def __call__(self, t):
        return 1.0 / (np.asarray(t, dtype=float) + self.offset)

    @property
    def harmonic(self) -> bool:
        return self.offset == 0.0

    @property
    def spec(self) -> str:
        return "harmonic" if self.harmonic else f"shifted:{self.offset:g}"

    @classmethod
    def from_spec(cls, spec: str) -> "StepSchedule":
        kind, _, arg = spec.strip().lower().partition(":")
        if kind == "harmonic":
            return cls()
        if kind == "shifted":
            try:
                return cls(float(arg))
            except ValueError:
                pass
        raise ConfigError(f"bad step schedule {spec!r}")


# ---------------------------------------------------------------------------
# mirror descent
# ---------------------------------------------------------------------------

def omd_update(model: ExponentialFamilyModel, fset: FeasibleSet, mu, count, phi, schedule: StepSchedule):
    """One dual step plus projected primal step.

    Returns ``(mu_new, theta_new, projected)`` where ``projected`` flags rows
    whose primal point moved under projection; for those rows the mean
    parameter is recomputed from the projected natural parameter.
    """
    eta = schedule(np.asarray(count) + 1)[..., None]
    mu = mu - eta * (mu - phi)
    theta_tilde = model.dual_grad(mu)
    theta = bregman_project(model, fset, theta_tilde)
    projected = np.any(theta != theta_tilde, axis=-1)
    if np.any(projected):
        mu = np.where(projected[..., None], model.mean(theta), mu)
    return mu, theta, projected


@dataclass(frozen=True)
class OmdEstimatorState:
    theta_hat: np.ndarray
    mu_hat: np.ndarray
    count: int = 0
    schedule: StepSchedule = field(default_factory=StepSchedule)
    feasible_set: FeasibleSet = field(default_factory=FullSpace)
    cum_loss: float = 0.0
    cum_suffstat: np.ndarray | None = None
    bregman_sum: float = 0.0
    projection_used: bool = False

    @property
    def theta(self):
        return self.theta_hat

    def update(self, model, x):
        return omd_step(self, model, x)


def omd_init(model, theta0, feasible_set: FeasibleSet | None = None, schedule: StepSchedule | None = None):
    fset = FullSpace() if feasible_set is None else feasible_set
    check_compatible(model, fset)
    theta0 = model.as_natural(theta0)
    return OmdEstimatorState(
        theta_hat=theta0,
        mu_hat=model.mean(theta0),
        schedule=schedule or StepSchedule(),
        feasible_set=fset,
        cum_suffstat=np.zeros(model.dim),
    )


def omd_step(state: OmdEstimatorState, model, x) -> OmdEstimatorState:
    phi = model.suff_stat(x)
    if phi.shape != (model.dim,):
        raise InvalidParameterError(f"observation has shape {np.shape(x)}, expected one sample")
    loss = float(model.loss(state.theta_hat, x))
    mu, theta, projected = omd_update(
        model, state.feasible_set, state.mu_hat, state.count, phi, state.schedule
    )
    if not np.all(model.in_domain(theta)):
        raise NumericDomainError(f"estimate left the natural domain: {theta}")
    t = state.count + 1
    inv_eta = 1.0 / float(state.schedule(t))
    return replace(
        state,
        theta_hat=theta,
        mu_hat=mu,
        count=t,
        cum_loss=state.cum_loss + loss,
        cum_suffstat=state.cum_suffstat + phi,
        bregman_sum=state.bregman_sum + inv_eta * float(_bregman_dual(model, mu, state.mu_hat)),
        projection_used=state.projection_used or bool(projected),
    )


def omd_trajectory(model, theta0, samples, feasible_set=None, schedule=None):
    """Run the estimator over ``samples``.

    Returns ``(estimates, state)`` where ``estimates[i]`` is the estimate that
    scores ``samples[i]`` (so ``estimates[0] == theta0``).
    """
    state = omd_init(model, theta0, feasible_set, schedule)
    estimates = []
    for x in samples:
        estimates.append(state.theta_hat)
        state = omd_step(state, model, x)
    return np.array(estimates).reshape(len(estimates), model.dim), state


# ---------------------------------------------------------------------------
# batch MLE and regret
# ---------------------------------------------------------------------------

class MleResult(NamedTuple):
    theta: np.ndarray
    clamped: bool


def mle_from_mean(model, mean):
    """Unconstrained MLE from an empirical mean of sufficient statistics.

    Boundary means (all-zero Bernoulli coordinates, say) are clamped into the
    interior; the flag reports it.
    """
    mean = np.asarray(mean, dtype=float)
    if isinstance(model, BernoulliProduct):
        clamped = np.any((mean < BERNOULLI_EPS) | (mean > 1 - BERNOULLI_EPS), axis=-1)
    elif isinstance(model, GammaFixedShape):
        clamped = np.any(mean >= 1.0 / GAMMA_EPS, axis=-1)
    else:
        clamped = np.zeros(mean.shape[:-1], dtype=bool)
    theta = model.clip_natural(model.dual_grad(mean))
    return theta, clamped


def batch_mle(model, samples) -> MleResult:
    phi = model.suff_stat(np.asarray(samples, dtype=float))
    phi = phi.reshape(-1, model.dim)
    if len(phi) == 0:
        raise InvalidParameterError("batch_mle needs at least one sample")
    theta, clamped = mle_from_mean(model, phi.mean(axis=0))
    return MleResult(theta, bool(clamped))


def regret_direct(model, theta0, samples, estimates) -> float:
    """Cumulative loss of the plug-in estimates minus the best loss in hindsight.

    ``estimates[i]`` must be the estimate used to score ``samples[i]``.
    ``theta0`` is accepted for interface symmetry; it should equal
    ``estimates[0]``.
    """
    phi = model.suff_stat(np.asarray(samples, dtype=float)).reshape(-1, model.dim)
    est = np.asarray(estimates, dtype=float).reshape(-1, model.dim)
    if len(est) != len(phi):
        raise InvalidParameterError(
            f"need one estimate per sample, got {len(est)} estimates for {len(phi)} samples"
        )
    if len(phi) == 0:
        return 0.0
    online = np.sum(model.log_partition(est) - np.sum(est * phi, axis=-1))
    best, _ = mle_from_mean(model, phi.mean(axis=0))
    hindsight = len(phi) * model.log_partition(best) - np.dot(best, phi.sum(axis=0))
    return float(online - hindsight)


def regret_bregman(state: OmdEstimatorState) -> float:
    """Regret as the weighted sum of consecutive dual Bregman divergences.

    Valid only for the harmonic schedule with the projection never active.
    """
    if not state.schedule.harmonic:
        raise IdentityNotApplicable("regret identity needs eta_t = 1/t")
    if state.projection_used:
        raise IdentityNotApplicable("regret identity needs an inactive projection")
    return state.bregman_sum


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def mom_theta(count, total, c0=1.0, s0=1.0):
    """Pseudo-count rate estimate (t + c0) / (sum x + s0), as a natural parameter."""
    return -(np.asarray(count, dtype=float)[..., None] + c0) / (total + s0)


@dataclass(frozen=True)
class MomState:
    count: int = 0
    total: float = 0.0
    c0: float = 1.0
    s0: float = 1.0

    @property
    def beta_hat(self) -> float:
        return (self.count + self.c0) / (self.total + self.s0)

    @property
    def theta(self):
        return np.array([-self.beta_hat])

    def update(self, model, x):
        return mom_step(self, x)


def mom_step(state: MomState, x) -> MomState:
    return replace(state, count=state.count + 1, total=state.total + float(np.asarray(x).reshape(-1)[0]))


def shrink_estimate(mean_est, mode: str = "soft", threshold=0.0):
    """Coordinatewise soft or hard thresholding."""
    m = np.asarray(mean_est, dtype=float)
    thr = np.asarray(threshold, dtype=float)
    if np.any(thr < 0):
        raise ConfigError("shrinkage threshold must be nonnegative")
    if mode == "soft":
        return np.sign(m) * np.maximum(np.abs(m) - thr, 0.0)
    if mode == "hard":
        return np.where(np.abs(m) > thr, m, 0.0)
    raise ConfigError(f"unknown shrinkage mode {mode!r}")


def universal_threshold(dim: int, count):
    """sqrt(2 log d / n), the default shrinkage level for a mean of n samples."""
    n = np.maximum(np.asarray(count, dtype=float), 1.0)
    return np.sqrt(2.0 * np.log(max(dim, 2)) / n)


def shrink_theta(count, total, theta0, mode="soft", threshold=None):
    """Shrunken running mean of the samples seen so far; theta0 before any."""
    count = np.asarray(count)
    dim = np.shape(total)[-1]
    n = np.maximum(count, 1)[..., None]
    thr = universal_threshold(dim, n) if threshold is None else threshold
    est = theta0 + shrink_estimate(total / n - theta0, mode, thr)
    return np.where(count[..., None] > 0, est, theta0)


@dataclass(frozen=True)
class ShrinkState:
    theta0: np.ndarray
    count: int = 0
    total: np.ndarray | None = None
    mode: str = "soft"
    threshold: float | None = None

    @property
    def theta(self):
        if self.count == 0:
            return self.theta0
        return shrink_theta(self.count, self.total, self.theta0, self.mode, self.threshold)

    def update(self, model, x):
        phi = model.suff_stat(x)
        total = phi if self.total is None else self.total + phi
        return replace(self, count=self.count + 1, total=total)


@dataclass(frozen=True)
class FixedState:
    """A pre-specified parameter that never moves (CUSUM-style plug-in)."""

    theta: np.ndarray

    def update(self, model, x):
        return self
