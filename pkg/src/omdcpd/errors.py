class InvalidParameterError(ValueError):
    """A parameter lies outside its family's domain."""


class NumericDomainError(ArithmeticError):
    """An update left the natural domain and projection could not restore it."""


class ConfigError(ValueError):
    """Inconsistent or unsupported configuration."""


class IdentityNotApplicable(RuntimeError):
    """The Bregman regret identity needs 1/t steps and an inactive projection."""
