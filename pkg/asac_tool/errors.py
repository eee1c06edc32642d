"""
Exception types raised by the tool; each also derives from the closest
built-in.
"""


class AsacError(Exception):
    """
    Base class for every error raised by ``asac_tool``.
    """


class ShapeError(AsacError, ValueError):
    """
    Array shapes do not agree for an operation.
    """


class NonFiniteError(AsacError, ArithmeticError):
    """
    A value or gradient became NaN or infinite.
    """


class ConfigError(AsacError, ValueError):
    """
    An experiment configuration is invalid.
    """


class IngestError(AsacError, ValueError):
    """
    An input CSV file does not follow the episode schema.
    """


class MetricError(AsacError, ValueError):
    """
    A metric cannot be computed from the given data.
    """
