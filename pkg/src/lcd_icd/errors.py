"""Exception hierarchy. Each error knows the process exit code it maps to."""


class LcdIcdError(Exception):
    """Base class for all lcd-icd failures."""

    exit_code = 2


class UsageError(LcdIcdError):
    """A parameter value is out of its valid range."""

    exit_code = 1


class DataError(LcdIcdError, ValueError):
    """Input data is malformed or inconsistent."""

    exit_code = 2


class DegenerateBoxError(DataError):
    pass


class BoxOutOfBoundsError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class DuplicateImageError(DataError):
    pass


class UnknownReferenceError(DataError):
    pass


class NoCoverageError(DataError):
    pass


class ManifestParseError(DataError):
    """A JSON Lines record could not be parsed.

    Attributes:
        path: File being parsed.
        line_number: 1-based line of the offending record.
    """

    def __init__(self, path, line_number: int, message: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


class NumericalError(LcdIcdError, ArithmeticError):
    exit_code = 3


class DivergedTrainingError(NumericalError):
    """Training loss became NaN or infinite."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
