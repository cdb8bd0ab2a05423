"""Exception types shared across the package."""


class LoftqError(Exception):
    """Base class for errors raised by this package."""


class FormatError(LoftqError):
    """A file or byte buffer does not match its declared layout."""


class ConvergenceError(LoftqError):
    """An iterative solver exhausted its iteration budget.

    Carries the last estimate so callers can decide whether it is still
    usable.
    """

    def __init__(self, message, last_estimate=None):
        super().__init__(message)
        self.last_estimate = last_estimate
