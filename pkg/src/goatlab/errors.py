"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or argument values."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation expects."""


class NumericError(ArithmeticError):
    """A NaN or infinite value showed up where only finite reals are allowed."""


class DataError(ValueError):
    """Offline data is empty or malformed."""


class QueueStateError(RuntimeError):
    """A queue statistic was requested from an empty queue."""


class TheoremCheckError(AssertionError):
    """A randomized property check found a counterexample."""

    def __init__(self, message, counterexamples=None):
        super().__init__(message)
        self.counterexamples = counterexamples or []
