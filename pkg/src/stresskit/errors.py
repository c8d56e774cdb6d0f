"""Exception hierarchy. The CLI maps each family to an exit code."""

from __future__ import annotations


class StressKitError(Exception):
    exit_code = 1


class ConfigError(StressKitError, ValueError):
    """Invalid configuration or hyperparameters."""

    exit_code = 2


class DataError(StressKitError, ValueError):
    """Input data that violates a schema or a precondition."""

    exit_code = 3


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ManifestMismatchError(ParseError):
    pass


class DuplicateHourError(ParseError):
    pass


class UnknownGroupError(DataError):
    pass


class LayoutMismatchError(DataError):
    pass


class SingleClassError(DataError):
    pass


class UnfittableCoordinateError(DataError):
    def __init__(self, coordinates):
        self.coordinates = list(coordinates)
        super().__init__(f"coordinates with no present values: {self.coordinates}")


class NumericalError(StressKitError, ArithmeticError):
    exit_code = 4


class StageError(StressKitError):
    """A pipeline stage failed; carries the stage name and keeps the cause's exit code."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 4)
        super().__init__(f"stage '{stage}' failed: {cause}")
