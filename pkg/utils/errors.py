"""
Exception hierarchy shared by every package.

The CLI maps these onto exit codes (see main.py), so raise the most specific
class that describes the failure.
"""


class LadError(Exception):
    """Base class for all errors raised by this project."""
    pass


class InvalidArgumentError(LadError, ValueError):
    """Raised when an operation receives arguments outside its contract."""
    pass


class ShapeError(InvalidArgumentError):
    """Raised when array shapes do not chain through a network."""
    pass


class InvariantViolationError(LadError):
    """Raised when internal state no longer satisfies its invariants."""
    pass


class ConfigError(LadError):
    """Raised for invalid experiment, training or synthetic-data configuration."""
    pass


class DataError(LadError):
    """Raised for unusable data: non-finite values, mismatched domains, I/O."""
    pass


class DataParseError(DataError):
    """Raised when a feature or label file cannot be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaVersionError(DataError):
    """Raised when a persisted artifact carries an unexpected schema version."""
    pass


class CheckpointError(DataError):
    """Raised when a checkpoint cannot be read or does not fit the model."""
    pass
