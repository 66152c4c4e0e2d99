"""Exception hierarchy shared by every layer of sdeoperator.

Each exception carries the process exit code the CLI reports for it, so a
command can translate any library failure into a consistent exit status.
"""

from typing import Optional


class SdeOperatorError(Exception):
    """Base class for all expected failures raised by sdeoperator."""

    exit_code = 1

    def __init__(self, message: str, exit_code: Optional[int] = None) -> None:
        super().__init__(message)
        if exit_code is not None:
            self.exit_code = exit_code


class InvalidArgumentError(SdeOperatorError, ValueError):
    """Raised when an operation receives arguments outside its domain."""


class DegenerateInputError(SdeOperatorError, ValueError):
    """Raised when a metric is undefined for the input (e.g. a constant path)."""


class ValidationError(SdeOperatorError):
    """Raised when artifacts disagree with each other (grids, sensors, configs)."""


class ConfigError(SdeOperatorError):
    """Raised when an experiment config is missing, malformed or inconsistent."""


class DatasetIOError(SdeOperatorError):
    """Raised when a file cannot be read or written."""

    exit_code = 2


class FormatError(DatasetIOError):
    """Raised when a file does not conform to its documented format."""

    def __init__(self, message: str, path: Optional[str] = None,
                 row: Optional[int] = None) -> None:
        location = ""
        if path is not None:
            location = f"{path}"
            if row is not None:
                location += f", row {row}"
            location += ": "
        super().__init__(f"{location}{message}")
        self.path = path
        self.row = row


class NumericOverflowError(SdeOperatorError):
    """Raised when a solver produces a non-finite value."""

    exit_code = 3

    def __init__(self, message: str, step: int, particle: Optional[int] = None) -> None:
        where = f"step {step}" if particle is None else f"particle {particle}, step {step}"
        super().__init__(f"{message} ({where})")
        self.step = step
        self.particle = particle


class TrainingDivergedError(SdeOperatorError):
    """Raised when the training loss stops being finite."""

    exit_code = 3

    def __init__(self, epoch: int, loss: float) -> None:
        super().__init__(f"Training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss
