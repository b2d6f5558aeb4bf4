"""Typed exception hierarchy.

The CLI maps these onto process exit codes: configuration problems exit
with 2, data ingestion problems with 3, and numerical failures with 4.
"""


class CfdistError(Exception):
    """Base class for all package errors."""


class ConfigError(CfdistError):
    """Invalid or inconsistent run configuration."""


class DataError(CfdistError):
    """Base class for ingestion and dataset validation errors."""


class ParseError(DataError):
    """A cell could not be parsed as a finite number."""


class SchemaError(DataError):
    """Missing columns, duplicate headers, or a bad group column."""


class ValidationError(DataError):
    """Structurally valid input that violates a dataset precondition."""


class NumericalError(CfdistError):
    """Base class for estimation-time failures."""


class SingularDesignError(NumericalError):
    """Rank-deficient design matrix; carries the offending column name."""

    def __init__(self, column: str, message: str | None = None):
        self.column = column
        super().__init__(message or f"design matrix is singular at column {column!r}")


class SolverError(NumericalError):
    """An iterative solver did not converge within its budget."""


class DomainError(NumericalError):
    """A functional was requested outside its domain of definition."""


class DegenerateDistributionError(NumericalError):
    """A distribution has no usable variation (e.g. an all-zero band scale)."""
