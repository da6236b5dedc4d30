"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class SarMonetError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(SarMonetError, ValueError):
    """An argument is outside its allowed range or set."""


class DomainError(SarMonetError, ValueError):
    """Input values lie outside the mathematical domain of an operation."""


class ShapeError(SarMonetError, ValueError):
    """Array shapes or channel counts do not match."""


class IngestionError(SarMonetError, OSError):
    """A source file could not be read or decoded."""


class FormatError(IngestionError):
    """A binary file has a bad magic number, version or length."""


class DegenerateInputError(SarMonetError, ValueError):
    """Input is valid but carries no usable information (e.g. zero variance)."""


class UsageError(SarMonetError, RuntimeError):
    """An API was called out of order (e.g. backward with a stale cache)."""


class ConfigError(SarMonetError, ValueError):
    """Configuration is invalid or inconsistent with the data."""


class NumericError(SarMonetError, FloatingPointError):
    """A computation produced non-finite values."""
