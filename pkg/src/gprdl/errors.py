"""Exception hierarchy shared by all gprdl modules."""


class GprdlError(Exception):
    """Base class for every error raised by this package."""

    #: process exit code used by the command line front end
    exit_code = 2


class ConfigurationError(GprdlError, ValueError):
    exit_code = 1


class InputError(GprdlError, ValueError):
    pass


class DataError(GprdlError, ValueError):
    pass


class NormalizationError(DataError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class FormatError(GprdlError):
    """Malformed container file; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None, expected=None, actual=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
        self.expected = expected
        self.actual = actual


class ConvergenceError(GprdlError, ArithmeticError):
    exit_code = 3


class SimilarityUndefinedError(InputError):
    pass


class AnalysisError(GprdlError):
    pass


class SweepError(AnalysisError):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class TrainingError(GprdlError):
    exit_code = 3
