"""Exponential-family models in natural and mean coordinates.

Every model works on arrays whose trailing axis is the parameter dimension
``d``; leading axes broadcast, so the same functions serve a single stream or
a ``(paths, branches, d)`` stack in the Monte-Carlo engine.

The carrier measure never appears.  Densities are only ever compared through
ratios or through the loss ``Phi(theta) - theta . phi(x)``.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit, logit

from .errors import ConfigError, InvalidParameterError

GAMMA_EPS = 1e-8
BERNOULLI_EPS = 1e-12


class ExponentialFamilyModel:
    """Base class.  Subclasses fill in the five maps below."""

    name = "base"

    def __init__(self, dim: int):
        if int(dim) < 1:
            raise ConfigError(f"dimension must be positive, got {dim}")
        self.dim = int(dim)

    # --- the family ---------------------------------------------------
    def suff_stat(self, x):
        raise NotImplementedError

    def log_partition(self, theta):
        raise NotImplementedError

    def mean(self, theta):
        """Gradient of the log-partition (the mean map)."""
        raise NotImplementedError

    def dual(self, mu):
        raise NotImplementedError

    def dual_grad(self, mu):
        """Inverse of the mean map."""
        raise NotImplementedError

    def in_domain(self, theta) -> np.ndarray:
        raise NotImplementedError

    def clip_natural(self, theta):
        """Intersect with the enforced natural domain (identity by default)."""
        return theta

    def clip_mean(self, mu):
        return mu

    def sample(self, theta, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def natural_from_classical(self, value):
        raise NotImplementedError

    def classical_from_natural(self, theta):
        raise NotImplementedError

    # --- shared helpers -----------------------------------------------
    @property
    def spec(self) -> str:
        return f"{self.name}:{self.dim}"

    def check_natural(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 0:
            theta = np.full(self.dim, float(theta))
        if theta.shape[-1:] != (self.dim,):
            raise InvalidParameterError(
                f"{self.spec}: expected trailing dimension {self.dim}, got shape {theta.shape}"
            )
        if not np.all(self.in_domain(theta)):
            raise InvalidParameterError(f"{self.spec}: natural parameter outside domain: {theta}")
        return theta

    def as_natural(self, theta):
        """Broadcast a scalar or vector to a natural parameter of this model."""
        return self.check_natural(theta)

    def loss(self, theta, x):
        """Carrier-free negative log-likelihood ``Phi(theta) - theta . phi(x)``."""
        return self.log_partition(theta) - np.sum(theta * self.suff_stat(x), axis=-1)

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"

    def __eq__(self, other):
        return type(self) is type(other) and self.dim == other.dim

    def __hash__(self):
        return hash((type(self).__name__, self.dim))


class GaussianIdentity(ExponentialFamilyModel):
    """N(theta, I_d); natural and mean parameters coincide."""

    name = "gaussian"

    def suff_stat(self, x):
        return np.asarray(x, dtype=float)

    def log_partition(self, theta):
        return 0.5 * np.sum(np.square(theta), axis=-1)

    def mean(self, theta):
        return np.asarray(theta, dtype=float)

    def dual(self, mu):
        return 0.5 * np.sum(np.square(mu), axis=-1)

    def dual_grad(self, mu):
        return np.asarray(mu, dtype=float)

    def in_domain(self, theta):
        return np.all(np.isfinite(theta), axis=-1)

    def sample(self, theta, rng, size=None):
        theta = np.asarray(theta, dtype=float)
        shape = (() if size is None else tuple(np.atleast_1d(size))) + (self.dim,)
        return theta + rng.standard_normal(shape)

    def natural_from_classical(self, value):
        return self.as_natural(value)

    def classical_from_natural(self, theta):
        return np.asarray(theta, dtype=float)


class GammaFixedShape(ExponentialFamilyModel):
    """Gamma(1, beta), i.e. exponential with rate beta; theta = -beta.

    The open domain theta < 0 is enforced as theta <= -GAMMA_EPS.
    """

    name = "gamma"

    def __init__(self, dim: int = 1):
        if int(dim) != 1:
            raise ConfigError("the gamma family is scalar")
        super().__init__(1)

    @property
    def spec(self):
        return "gamma"

    def suff_stat(self, x):
        x = np.asarray(x, dtype=float)
        # scalar observations gain a trailing axis; (..., 1) inputs pass through
        return x if x.shape[-1:] == (1,) else x[..., None]

    def log_partition(self, theta):
        return -np.log(-theta[..., 0])

    def mean(self, theta):
        return -1.0 / np.asarray(theta, dtype=float)

    def dual(self, mu):
        return -1.0 - np.log(mu[..., 0])

    def dual_grad(self, mu):
        return -1.0 / np.asarray(mu, dtype=float)

    def in_domain(self, theta):
        theta = np.asarray(theta)
        return np.all(theta <= -GAMMA_EPS, axis=-1)

    def clip_natural(self, theta):
        return np.minimum(theta, -GAMMA_EPS)

    def sample(self, theta, rng, size=None):
        rate = -float(np.asarray(theta).reshape(-1)[0])
        return rng.exponential(1.0 / rate, size=size)

    def natural_from_classical(self, value):
        beta = np.asarray(value, dtype=float)
        if np.any(~(beta > 0)):
            raise InvalidParameterError(f"gamma rate must be positive, got {value}")
        return self.as_natural(-beta)

    def classical_from_natural(self, theta):
        return -np.asarray(theta, dtype=float)


class BernoulliProduct(ExponentialFamilyModel):
    """Product of d independent Bernoulli coordinates in logit coordinates."""

    name = "bernoulli"

    def suff_stat(self, x):
        return np.asarray(x, dtype=float)

    def log_partition(self, theta):
        return np.sum(np.logaddexp(0.0, theta), axis=-1)

    def mean(self, theta):
        return expit(theta)

    def clip_mean(self, mu):
        return np.clip(mu, BERNOULLI_EPS, 1.0 - BERNOULLI_EPS)

    def dual(self, mu):
        mu = self.clip_mean(mu)
        return np.sum(mu * np.log(mu) + (1.0 - mu) * np.log1p(-mu), axis=-1)

    def dual_grad(self, mu):
        return logit(self.clip_mean(mu))

    def in_domain(self, theta):
        return np.all(np.isfinite(theta), axis=-1)

    def sample(self, theta, rng, size=None):
        p = expit(np.asarray(theta, dtype=float))
        shape = (() if size is None else tuple(np.atleast_1d(size))) + (self.dim,)
        return (rng.random(shape) < p).astype(float)

    def natural_from_classical(self, value):
        p = np.asarray(value, dtype=float)
        if np.any(~((p > 0) & (p < 1))):
            raise InvalidParameterError(f"Bernoulli probability must lie in (0, 1), got {value}")
        return self.as_natural(logit(p))

    def classical_from_natural(self, theta):
        return expit(np.asarray(theta, dtype=float))


_FAMILIES = {
    "gaussian": GaussianIdentity,
    "gamma": GammaFixedShape,
    "bernoulli": BernoulliProduct,
}


def model_from_spec(spec: str) -> ExponentialFamilyModel:
    """Parse ``"gaussian:20"``, ``"gamma"`` or ``"bernoulli:190"``."""
    name, _, dim = spec.strip().lower().partition(":")
    if name not in _FAMILIES:
        raise ConfigError(f"unknown model {spec!r}; expected one of {sorted(_FAMILIES)}")
    if name == "gamma":
        if dim not in ("", "1"):
            raise ConfigError("the gamma family is scalar")
        return GammaFixedShape()
    try:
        d = int(dim) if dim else 1
    except ValueError:
        raise ConfigError(f"bad dimension in model spec {spec!r}") from None
    return _FAMILIES[name](d)


def log_density_ratio(model, theta, theta0, x):
    """log f_theta(x) / f_theta0(x); broadcasts over leading axes."""
    theta = model.check_natural(theta)
    theta0 = model.check_natural(theta0)
    return _log_ratio(model, theta, theta0, x)


def _log_ratio(model, theta, theta0, x):
    # unchecked version for hot loops
    phi = model.suff_stat(x)
    return (
        np.sum((theta - theta0) * phi, axis=-1)
        - model.log_partition(theta)
        + model.log_partition(theta0)
    )


def kl_divergence(model, theta1, theta2):
    """KL(f_theta1 || f_theta2) = Phi(theta2) - Phi(theta1) - (theta2 - theta1) . mean(theta1)."""
    theta1 = model.check_natural(theta1)
    theta2 = model.check_natural(theta2)
    val = (
        model.log_partition(theta2)
        - model.log_partition(theta1)
        - np.sum((theta2 - theta1) * model.mean(theta1), axis=-1)
    )
    return np.maximum(val, 0.0)


def bregman_primal(model, theta1, theta2):
    """B_Phi(theta1, theta2), which equals KL(f_theta2 || f_theta1)."""
    return (
        model.log_partition(theta1)
        - model.log_partition(theta2)
        - np.sum(model.mean(theta2) * (theta1 - theta2), axis=-1)
    )


def _check_mean(model, mu):
    mu = np.asarray(mu, dtype=float)
    if mu.shape[-1:] != (model.dim,):
        raise InvalidParameterError(f"{model.spec}: mean parameter has shape {mu.shape}")
    if isinstance(model, GammaFixedShape) and np.any(~(mu > 0)):
        raise InvalidParameterError(f"gamma mean must be positive, got {mu}")
    if isinstance(model, BernoulliProduct) and np.any(~((mu >= 0) & (mu <= 1))):
        raise InvalidParameterError(f"Bernoulli mean must lie in [0, 1], got {mu}")
    return mu


def bregman_dual(model, mu1, mu2):
    """B_{Phi*}(mu1, mu2) in mean coordinates."""
    mu1 = _check_mean(model, mu1)
    mu2 = _check_mean(model, mu2)
    return _bregman_dual(model, mu1, mu2)


def _bregman_dual(model, mu1, mu2):
    val = (
        model.dual(mu1)
        - model.dual(mu2)
        - np.sum(model.dual_grad(mu2) * (mu1 - mu2), axis=-1)
    )
    return np.maximum(val, 0.0)


def natural_from_classical(model, value):
    return model.natural_from_classical(value)


def classical_from_natural(model, theta):
    return model.classical_from_natural(theta)


def sample(model, theta, rng, size=None):
    return model.sample(model.check_natural(theta), rng, size=size)
