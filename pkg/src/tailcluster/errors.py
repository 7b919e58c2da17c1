"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to.
"""


class TailClusterError(Exception):
    exit_code = 1


class DomainError(TailClusterError, ValueError):
    """An argument lies outside the domain of an operation."""

    exit_code = 3


class ConfigError(TailClusterError):
    exit_code = 1


class DataError(TailClusterError):
    """Bad input data: unparseable, non-positive prices, too few assets."""

    exit_code = 2


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InsufficientDataError(DataError):
    pass


class RangeError(DataError, ValueError):
    pass


class FitError(TailClusterError):
    """A numerical fit could not produce a valid estimate."""

    exit_code = 3


class NumericError(TailClusterError, ArithmeticError):
    exit_code = 3


class IncompleteInputError(TailClusterError, ValueError):
    exit_code = 3


class PipelineError(TailClusterError):
    exit_code = 3


class DependencyError(TailClusterError):
    """A stage's upstream artifacts are missing, stale or corrupt."""

    exit_code = 4

    def __init__(self, message, stage=None):
        self.stage = stage
        super().__init__(message)
