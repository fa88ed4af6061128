"""Exception types shared across the package.

The CLI maps these onto process exit codes (see ``harunet.cli``).
"""


class DimensionError(ValueError):
    """Tensor or array shapes are incompatible with an operation."""


class ConfigurationError(ValueError):
    """A block or network was configured with invalid settings."""


class UsageError(ValueError):
    """An API was called in a way its contract forbids."""


class DataError(Exception):
    """Input data is missing, malformed or out of range."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""
