"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


class DimensionError(ValueError):
    """Arrays that must share a shape do not."""


class DivergenceError(RuntimeError):
    """A numerical state became non-finite.

    Carries enough context to locate the failure without re-running.
    """

    def __init__(self, message, *, step=None, t=None, max_abs=None, where=None):
        super().__init__(message)
        self.step = step
        self.t = t
        self.max_abs = max_abs
        self.where = where

    def as_record(self):
        return {"step": self.step, "t": self.t, "max_abs": self.max_abs, "where": self.where}


class FormatError(ValueError):
    """Unsupported or malformed file contents."""


class DatasetError(RuntimeError):
    """A dataset could not be assembled (no usable pairs, bad layout)."""


class NormalizationError(ValueError):
    """Normalization reference is identically zero."""


class UsageError(RuntimeError):
    """An API was called out of order."""
