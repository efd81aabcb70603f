"""Feasible sets and the projected primal step of mirror descent."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericDomainError
from .expfam import ExponentialFamilyModel, GaussianIdentity


@dataclass(frozen=True)
class FullSpace:
    spec = "full"


@dataclass(frozen=True)
class L1Ball:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError(f"L1 radius must be positive, got {self.radius}")

    @property
    def spec(self):
        return f"l1:{self.radius:g}"


@dataclass(frozen=True)
class IntervalClamp:
    lo: float = -np.inf
    hi: float = np.inf

    def __post_init__(self):
        if np.any(np.asarray(self.lo) > np.asarray(self.hi)):
            raise ConfigError(f"interval bounds reversed: lo={self.lo}, hi={self.hi}")

    @property
    def spec(self):
        return f"clamp:{self.lo:g},{self.hi:g}"


FeasibleSet = FullSpace | L1Ball | IntervalClamp


def feasible_set_from_spec(spec: str) -> FeasibleSet:
    """Parse ``"full"``, ``"l1:<s>"`` or ``"clamp:<lo>,<hi>"``."""
    kind, _, arg = spec.strip().lower().partition(":")
    try:
        if kind == "full":
            return FullSpace()
        if kind == "l1":
            return L1Ball(float(arg))
        if kind == "clamp":
            lo, hi = arg.split(",")
            return IntervalClamp(float(lo), float(hi))
    except ValueError:
        raise ConfigError(f"bad feasible-set spec {spec!r}") from None
    raise ConfigError(f"unknown feasible set {spec!r}")


def project_l1(v, s: float):
    """Euclidean projection onto ``{w : ||w||_1 <= s}`` along the last axis.

    Sort-based soft thresholding (Duchi et al. 2008).  Rows already inside the
    ball are returned untouched.
    """
    v = np.asarray(v, dtype=float)
    if not s > 0:
        raise ConfigError("L1 radius must be positive")
    a = np.abs(v)
    outside = a.sum(axis=-1) > s
    if not np.any(outside):
        return v.copy()
    u = -np.sort(-a[outside], axis=-1)
    css = np.cumsum(u, axis=-1) - s
    idx = np.arange(1, u.shape[-1] + 1)
    # rho = number of sorted entries that stay positive after thresholding
    rho = np.count_nonzero(u * idx > css, axis=-1)
    tau = np.take_along_axis(css, (rho - 1)[..., None], axis=-1) / rho[..., None]
    out = v.copy()
    out[outside] = np.sign(v[outside]) * np.maximum(a[outside] - tau, 0.0)
    return out


def bregman_project(model: ExponentialFamilyModel, fset: FeasibleSet, theta):
    """argmin over u in fset (and the natural domain) of B_Phi(u, theta)."""
    theta = np.asarray(theta, dtype=float)
    if isinstance(fset, FullSpace):
        out = model.clip_natural(theta)
    elif isinstance(fset, L1Ball):
        if not isinstance(model, GaussianIdentity):
            raise ConfigError("L1-ball projection is only defined for the Gaussian family")
        out = project_l1(theta, fset.radius)
    elif isinstance(fset, IntervalClamp):
        # B_Phi(., theta) is separable and convex with minimum at theta, so the
        # interval minimiser is the clamp
        out = model.clip_natural(np.clip(theta, fset.lo, fset.hi))
        if not np.all(out >= np.asarray(fset.lo)):
            raise ConfigError(f"{fset.spec} does not meet the natural domain of {model.spec}")
    else:
        raise ConfigError(f"unsupported feasible set {fset!r}")
    if not np.all(np.isfinite(out)):
        raise NumericDomainError(f"projection produced non-finite parameter {out}")
    return out


def check_compatible(model: ExponentialFamilyModel, fset: FeasibleSet) -> None:
    """Raise ConfigError for combinations the projector does not support."""
    if isinstance(fset, L1Ball) and not isinstance(model, GaussianIdentity):
        raise ConfigError("L1-ball projection is only defined for the Gaussian family")
    if isinstance(fset, IntervalClamp):
        probe = model.clip_natural(np.full(model.dim, float(fset.hi)))
        if np.any(probe < fset.lo):
            raise ConfigError(f"{fset.spec} does not meet the natural domain of {model.spec}")
