"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A config value, shape, or schedule is invalid."""


class NumericFaultError(ArithmeticError):
    """A non-finite value appeared during network evaluation."""


class EmptyBufferError(RuntimeError):
    """A sample was requested from a replay stratum that holds no data."""
