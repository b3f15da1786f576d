"""Exception hierarchy shared across the toolkit.

Every error raised on purpose derives from SitError so callers (and the CLI)
can distinguish our failures from genuine bugs. The CLI maps subclasses to
exit codes: ConfigError -> 2, DataError -> 3, NumericError -> 4.
"""


class SitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(SitError):
    """Invalid configuration: bad value, unknown key, inconsistent combination."""


class DataError(SitError):
    """Invalid data: malformed file, wrong shape, NaN where none allowed."""


class ParseError(DataError):
    """Malformed serialized file. Carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ShapeError(DataError):
    """Array shape mismatch in an operation that cannot proceed."""


class StateError(SitError):
    """Object used before it reached the required state."""


class NumericError(SitError):
    """Non-finite value encountered where the computation must stay finite."""
