"""Exception hierarchy.

Input problems derive from :class:`ValidationError` (CLI exit code 1);
failures during fitting derive from :class:`TrainingError` (exit code 2).
"""

from sklearn.exceptions import NotFittedError


class TripletRegError(Exception):
    """Base class for every error raised by this package."""

    tag = "Error"


class ValidationError(TripletRegError, ValueError):
    tag = "ValidationError"


class TrainingError(TripletRegError, RuntimeError):
    tag = "TrainingError"


# -- ingest -----------------------------------------------------------------

class MissingFile(ValidationError, FileNotFoundError):
    tag = "MissingFile"


class MalformedRow(ValidationError):
    tag = "MalformedRow"


class NonNumericValue(ValidationError):
    tag = "NonNumericValue"


class DuplicateSongId(ValidationError):
    tag = "DuplicateSongId"


class MissingColumn(ValidationError):
    tag = "MissingColumn"

    def __init__(self, column, path=None):
        self.column = column
        where = f" in {path}" if path else ""
        super().__init__(f"MissingColumn({column!r}){where}")


class DegenerateRange(ValidationError):
    tag = "DegenerateRange"


class ColumnMismatch(ValidationError):
    tag = "ColumnMismatch"


class InvalidK(ValidationError):
    tag = "InvalidK"


# -- shapes -----------------------------------------------------------------

class DimensionMismatch(ValidationError):
    tag = "DimensionMismatch"


class ShapeMismatch(ValidationError):
    tag = "ShapeMismatch"


class InvalidDims(ValidationError):
    tag = "InvalidDims"


# -- fitting ----------------------------------------------------------------

class InfeasibleAnchor(TrainingError):
    tag = "InfeasibleAnchor"


class NonFiniteLoss(TrainingError):
    tag = "NonFiniteLoss"

    def __init__(self, epoch, value=float("nan")):
        self.epoch = epoch
        super().__init__(f"non-finite loss {value} at epoch {epoch}")


class RankDeficient(TrainingError):
    tag = "RankDeficient"


class DegenerateData(ValidationError):
    tag = "DegenerateData"


class DegenerateTarget(ValidationError):
    tag = "DegenerateTarget"


class NotFitted(TripletRegError, NotFittedError):
    tag = "NotFitted"


class ConvergenceWarning(UserWarning):
    """Emitted when the SVR solver stops at its iteration bound."""
