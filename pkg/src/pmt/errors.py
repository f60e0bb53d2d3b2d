class PmtError(Exception):
    """Base class for errors raised by this package."""


class SchemaError(PmtError):
    """Schema document or column layout does not match what was expected."""


class DataError(PmtError):
    """A record or input value violates a data invariant."""


class FitError(PmtError):
    """A model cannot be fitted on the given data."""


class UndefinedMetricError(PmtError, ValueError):
    """The metric is undefined for the input (e.g. a single class)."""


class ModelFormatError(PmtError):
    """A serialized model file is malformed or has an unknown version."""
