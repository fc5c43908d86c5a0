"""Exception taxonomy shared across the package.

Every operational failure maps to one of these so the service and CLI can
translate them into stable HTTP statuses and exit codes.
"""


class StockgatError(Exception):
    """Base class for all package errors."""


class ParseError(StockgatError):
    """Malformed input row/document; message carries the offending location."""


class ValidationError(StockgatError):
    """Data violates a domain invariant (non-positive price, NaN feature, ...)."""


class DuplicateError(StockgatError):
    """Duplicate key where uniqueness is required, e.g. (date, symbol)."""


class ConfigError(StockgatError):
    """Bad or inconsistent configuration."""


class CoverageError(StockgatError):
    """Required history, scores, or labels are missing for some symbol/day."""


class DimensionError(StockgatError):
    """Array shapes or declared dimensions do not line up."""


class GraphLookupError(StockgatError):
    """Unknown symbol or day queried against a relation graph."""


class DivergenceError(StockgatError):
    """Training produced a non-finite loss."""


class AlignmentError(StockgatError):
    """Two series that must share an index do not."""
