"""Exception types shared across the package.

CLI exit codes: ConfigError -> 2, DataFormatError -> 3, TrainingError -> 4.
"""


class CsiSenseError(Exception):
    """Base class for all csisense errors."""


class ConfigError(CsiSenseError):
    """Invalid configuration value or inconsistent dimensions."""


class ShapeError(CsiSenseError):
    """Array shape does not match the contract of the callee."""


class DataFormatError(CsiSenseError):
    """Malformed or truncated data file; carries a byte offset when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TruncatedFileError(DataFormatError):
    """File ends before the payload its header declares."""


class TrainingError(CsiSenseError):
    """Training could not start or diverged."""


class StateError(CsiSenseError):
    """Operation sequencing violated (e.g. backward before forward)."""


class NotFittedError(StateError):
    """Model used before fit() was called."""
