"""Exception hierarchy for errcal.

Errors are grouped by what the caller can do about them: fix the input file
(SchemaError, ParseError, UnknownColumnError), fix the analysis declaration
(SpecError), collect more or different data (DesignError and subclasses), or
accept that the requested correction is numerically impossible for this data
(SingularError, InfeasibleVarianceError).
"""


class ErrcalError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(ErrcalError):
    """Table-level problem: bad header, duplicate or empty names, lossy coercion."""


class ParseError(ErrcalError):
    """A cell could not be parsed. Carries 1-indexed data row and column name."""

    def __init__(self, row, column, message):
        super().__init__(f"data row {row}, column {column!r}: {message}")
        self.row = row
        self.column = column


class UnknownColumnError(ErrcalError):
    """A referenced column does not exist in the dataset."""


class SpecError(ErrcalError):
    """Invalid measurement declaration, or method incompatible with the design."""


class DesignError(ErrcalError):
    """The data cannot support the requested estimation (degenerate layout)."""


class InsufficientDataError(DesignError):
    """Fewer usable rows than parameters to estimate."""


class SingularError(ErrcalError):
    """A design or correction matrix is singular or not invertible."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class InfeasibleVarianceError(ErrcalError):
    """An assumed error variance is incompatible with the observed moments."""
