"""Exception hierarchy shared across the package."""


class MvsError(Exception):
    """Base class for all package errors."""


class DimensionError(MvsError):
    """Tensor shapes are incompatible with the requested operation."""


class NumericError(MvsError):
    """A computation produced non-finite values or diverged."""


class UsageError(MvsError):
    """An API was called in an unsupported way (e.g. backward on a detached tensor)."""


class ParameterError(MvsError):
    """A configuration value or argument is outside its legal range."""


class ParseError(MvsError):
    """A file could not be parsed; message carries the byte offset where known."""


class DatasetError(MvsError):
    """A dataset directory is missing views, cameras, or pair information."""
