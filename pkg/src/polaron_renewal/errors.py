"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class PolaronError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(PolaronError, ValueError):
    pass


class ResourceLimitError(PolaronError):
    """An excursion exceeded a configured hard cap.

    The partial statistics of the offending draw are attached so callers can
    decide whether to raise the cap; nothing is silently truncated.
    """

    def __init__(self, message: str, *, n: int, t: float, shard: int | None = None,
                 draw: int | None = None):
        super().__init__(message)
        self.n = n
        self.t = t
        self.shard = shard
        self.draw = draw


class EnsembleFormatError(PolaronError):
    def __init__(self, message: str, *, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EnsembleMismatchError(PolaronError):
    pass


class NumericalError(PolaronError):
    pass


class BracketError(NumericalError):
    pass


class DiagnosticError(NumericalError):
    pass


class InconclusiveTailError(NumericalError):
    pass


class NoPlateauError(NumericalError):
    pass


class DomainError(PolaronError, ValueError):
    pass


class PhysicalRangeWarning(UserWarning):
    """A quantity left the range it has for a physical ensemble."""
