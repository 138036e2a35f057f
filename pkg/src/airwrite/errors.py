"""Exception taxonomy shared across the package."""


class AirwriteError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(AirwriteError):
    """Operands have incompatible or unsupported shapes."""


class InvalidConfigError(AirwriteError):
    """A model, training, or invocation setting is out of contract."""


class EmptyInputError(AirwriteError):
    """An operation received empty data where content is required."""


class TooShortError(AirwriteError):
    """A trajectory has too few points to featurize."""


class InvalidProbabilityError(AirwriteError):
    """A probability parameter lies outside its valid range."""


class InvalidRootError(AirwriteError):
    """backward() was started from a non-scalar node."""


class NumericError(AirwriteError):
    """A numeric computation produced non-finite values."""


class NonFiniteGradientError(NumericError):
    """A gradient became NaN/inf; carries the parameter path."""

    def __init__(self, path: str):
        super().__init__(f"non-finite gradient for parameter '{path}'")
        self.path = path


class TrainingDivergedError(NumericError):
    """Training loss became non-finite; the model was rolled back."""


class InfeasibleTargetError(AirwriteError):
    """A CTC target cannot be emitted within the given frame count."""


class OracleTooLargeError(AirwriteError):
    """Brute-force enumeration limits were exceeded."""


class UndefinedMetricError(AirwriteError):
    """A metric is undefined for the given inputs (empty ground truth)."""


class DataFormatError(AirwriteError):
    """An input file is malformed; carries the offending line number."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class IntegrityError(AirwriteError):
    """A checkpoint payload does not match its manifest."""


class VersionError(AirwriteError):
    """A checkpoint was written by an unsupported format version."""


class ConfigMismatchError(AirwriteError):
    """A checkpoint's stored configuration conflicts with the expected one."""
