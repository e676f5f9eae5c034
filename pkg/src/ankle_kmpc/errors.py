"""Exception hierarchy shared by the library and the command-line tool."""


class KmpcError(Exception):
    """Base class. ``exit_code`` is what the CLI returns for this failure class."""

    exit_code = 1


class ConfigError(KmpcError, ValueError):
    exit_code = 2


class DataError(KmpcError):
    exit_code = 3


class FittingError(DataError):
    """Not enough (or unusable) data to fit a model."""


class NumericsError(KmpcError, ArithmeticError):
    exit_code = 4


class IntegrationError(NumericsError):
    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class DareError(NumericsError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class WarmupError(KmpcError, ValueError):
    """A delay-embedded lift was requested without enough history."""


class IOFailure(KmpcError, OSError):
    exit_code = 5
