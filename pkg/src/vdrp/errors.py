"""Exception taxonomy shared across the package.

Validation-type errors map to CLI exit code 2, numeric failures to 3.
"""


class VdrpError(Exception):
    """Base class for all package errors."""


class ValidationError(VdrpError):
    """Bad inputs: shapes, parameters, malformed files."""


class DimensionError(ValidationError):
    """Array shapes or extents do not agree."""


class ParameterError(ValidationError):
    """A scalar or mode parameter is outside its legal range."""


class DataError(ValidationError):
    """A data file violates its schema or references unknown ids."""


class NumericError(VdrpError):
    """A computation produced non-finite values."""


class DegenerateInputWarning(UserWarning):
    """Signals a degenerate input handled by a documented fallback."""
