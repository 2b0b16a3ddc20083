"""Exception hierarchy shared across modules.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class GclrecError(Exception):
    """Base class for all package errors."""


class ConfigError(GclrecError):
    """Invalid configuration key, value or combination."""


class DataError(GclrecError):
    """Unusable input data (missing files, empty datasets, bad splits)."""


class ParseError(DataError):
    """Malformed interaction line; carries the 1-based line number."""

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message)
        self.line_number = line_number


class NumericalError(GclrecError):
    """Training diverged or produced non-finite values."""
