"""Exception hierarchy shared by all vampnet modules."""


class VampnetError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(VampnetError, ValueError):
    pass


class NumericalError(VampnetError, ArithmeticError):
    pass


class RankZeroError(NumericalError):
    """Every eigenvalue of a matrix fell below the truncation threshold."""


class DivergenceError(NumericalError):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")


class ParseError(VampnetError, ValueError):
    pass


class EmptyDatasetError(VampnetError, ValueError):
    pass


class ConfigError(VampnetError, ValueError):
    pass
