"""Exception types shared across the package."""


class RatioPathError(Exception):
    """Base class for all package errors."""


class DomainError(RatioPathError):
    """An argument is outside the mathematical domain of the operation."""


class SingularityError(RatioPathError):
    """A quantity is evaluated at a point where it degenerates (e.g. alpha == 0)."""


class ExtrapolationError(RatioPathError):
    """A grid oracle was queried outside its tabulated region."""


class PreconditionError(RatioPathError):
    """A documented precondition of an operation is violated."""


class ConfigError(RatioPathError):
    """A config file or config dict is malformed."""


class CollapsedRunError(RatioPathError):
    """A particle run aborted because too many particles went non-finite."""

    def __init__(self, message, nonfinite_count=None, step=None):
        super().__init__(message)
        self.nonfinite_count = nonfinite_count
        self.step = step
