"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError (and subclasses) -> 3.
"""


class UnisumError(Exception):
    """Base class for all package errors."""


class ConfigError(UnisumError):
    """Invalid configuration or unusable argument combination."""


class DataError(UnisumError):
    """Malformed or missing input data."""


class NumericError(UnisumError):
    """Non-finite values or other numeric failures at runtime."""


class GraphConstructionError(NumericError):
    """Shape or arity mismatch while building a computation graph."""
