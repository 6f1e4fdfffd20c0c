"""Exception types shared across the package.

The CLI maps these onto exit codes: data/parse problems exit 2, numeric
failures exit 3.
"""


class SesnError(Exception):
    """Base class for all package errors."""


class ShapeError(SesnError):
    """Array extents incompatible with the requested operation."""


class ConfigError(SesnError):
    """Invalid configuration value or combination."""


class InputError(SesnError):
    """Runtime data violates an operation's contract."""


class DegenerateVarianceError(InputError):
    """Batch statistics cannot be estimated (batch of size 1)."""


class ParseError(SesnError):
    """A file or stream could not be decoded."""


class NumericError(SesnError):
    """A computation produced non-finite values."""
