"""Exception and warning types raised across the package."""


class OrthomedError(Exception):
    """Base class for all package errors."""


class DegenerateColumn(OrthomedError, ValueError):
    """A column would receive a zero penalty loading."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"column {column!r} has a zero loading")


class UnboundedObjective(OrthomedError):
    pass


class InstrumentDegenerate(OrthomedError):
    """The estimated instrument has (numerically) zero second moment."""


class UnionTooLarge(OrthomedError):
    pass


class StageError(OrthomedError):
    """Wraps an error raised inside one stage of a pipeline."""

    def __init__(self, stage, error):
        self.stage = stage
        self.error = error
        super().__init__(f"[{stage}] {type(error).__name__}: {error}")


class DataFormatError(OrthomedError, ValueError):
    pass


class RankDeficientWarning(UserWarning):
    """Collinear columns were dropped or handled by pseudo-inverse."""
