"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class DimensionError(ValueError):
    """Array shapes or lengths do not agree."""


class CapacityError(RuntimeError):
    """A size bound was exceeded (search space, replay buffer, ...)."""


class NumericError(ArithmeticError):
    """A loss or gradient became non-finite."""


class ConfigError(ValueError):
    """Invalid experiment or environment configuration."""
