"""Desk-scale SAR despeckling with the MONet network and its statistical loss.

Submodules: ``speckle`` (simulation and datasets), ``stats`` (distributions),
``nn`` (network engine), ``loss``, ``train``, ``metrics``, ``detect``,
``fileio`` (SARF, PGM, PNG), ``config`` and ``cli``.
"""

from .errors import (ConfigError, DegenerateInputError, DomainError, FormatError, IngestionError,
                     NumericError, ParameterError, SarMonetError, ShapeError, UsageError)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DegenerateInputError", "DomainError", "FormatError", "IngestionError",
    "NumericError", "ParameterError", "SarMonetError", "ShapeError", "UsageError", "__version__",
]
