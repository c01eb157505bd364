"""Exception types shared by every stage of the pipeline."""


class CCGError(Exception):
    """Base class for all errors raised by :mod:`ccg`."""


class InvalidArgumentError(CCGError, ValueError):
    """An argument violates a documented precondition."""


class FormatError(InvalidArgumentError):
    """A file on disk is malformed (bad magic, truncated payload, bad CSV cell)."""


class NumericError(CCGError, FloatingPointError):
    """A computation produced a non-finite value or diverged."""


class UndefinedTestError(InvalidArgumentError):
    """A statistic is undefined for the given sample (e.g. all paired differences zero)."""


class DivergenceError(NumericError):
    """Training diverged; ``last_good`` holds the parameters from the last finite epoch."""

    def __init__(self, message, epoch=None, last_good=None):
        super().__init__(message)
        self.epoch = epoch
        self.last_good = last_good
