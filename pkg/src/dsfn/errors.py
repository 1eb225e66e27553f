"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage/config problems exit 1,
data problems exit 2, numeric failures (NaN/Inf) exit 3.
"""


class DsfnError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DsfnError):
    """Operands have incompatible or unsupported shapes."""


class ConfigError(DsfnError):
    """Bad configuration key or value."""


class DataError(DsfnError):
    """Dataset, file or checkpoint problem."""


class NumericError(DsfnError):
    """Non-finite values where finite ones are required."""
