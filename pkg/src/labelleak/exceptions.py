"""Exception hierarchy shared by every module."""


class LabelLeakError(Exception):
    """Base class for all errors raised by this package."""


class SizeError(LabelLeakError, ValueError):
    """Array or sequence dimensions do not fit together."""


class DomainError(LabelLeakError, ValueError):
    """A value lies outside the domain an operation accepts."""


class NumericError(LabelLeakError, ArithmeticError):
    """A numeric routine failed to produce a trustworthy answer.

    ``best`` carries the best iterate found (if any) and ``residual`` its
    residual norm, so callers can still inspect what went wrong.
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class DegenerateError(NumericError):
    """The input carries no usable signal (e.g. an all-zero gradient)."""


class CapabilityError(LabelLeakError, ValueError):
    """An attack cannot run on the update it was given."""


class SchemaError(LabelLeakError, ValueError):
    """A CSV or config file does not match its declared schema."""


class CsvParseError(SchemaError):
    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class UndefinedMetricError(LabelLeakError, ValueError):
    """A metric has no defined value for the given input."""
