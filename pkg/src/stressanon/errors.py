"""Exception hierarchy shared by all modules."""


class StressAnonError(Exception):
    """Base class for package errors."""


class WavFormatError(StressAnonError):
    """Malformed RIFF/WAV header."""


class UnsupportedEncodingError(StressAnonError):
    """WAV encoding the reader does not handle (compressed, 24/32-bit...)."""


class InsufficientInputError(StressAnonError, ValueError):
    """Signal too short for the requested analysis window."""


class ConfigError(StressAnonError, ValueError):
    """Invalid or inconsistent configuration."""


class ShapeError(StressAnonError, ValueError):
    """Incompatible array shapes."""


class DomainError(StressAnonError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class PlanError(StressAnonError, ValueError):
    """Augmentation plan cannot be built for the given counts."""


class PlanViolationError(StressAnonError):
    """Manifest contents disagree with the augmentation plan."""


class SplitError(StressAnonError, ValueError):
    """Class too small to split."""


class ManifestError(StressAnonError, ValueError):
    """Schema violation in a manifest file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataError(StressAnonError, ValueError):
    """Empty split or missing features."""


class TrainingError(StressAnonError, RuntimeError):
    """Training diverged."""
