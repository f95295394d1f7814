"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes; library callers catch them like
any ValueError/RuntimeError subclasses.
"""


class SpatialsurvError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(SpatialsurvError):
    """Malformed or inconsistent run configuration."""

    exit_code = 2


class DataError(SpatialsurvError):
    """Input data failed validation at ingestion."""

    exit_code = 3


class RequestError(SpatialsurvError):
    """A well-formed but unsatisfiable request (bad argument, out of range)."""

    exit_code = 4


class InvalidArgumentError(RequestError, ValueError):
    """Argument outside the documented domain of an operation."""


class OutOfRangeError(RequestError):
    """Value outside the supported range (e.g. a time beyond the last knot)."""


class DegenerateInputError(RequestError):
    """Input with no usable structure (e.g. all coordinates identical)."""


class NumericalError(SpatialsurvError):
    """Numerical failure that survived the documented recovery policy."""

    exit_code = 5


class InitializationError(NumericalError):
    """Sampler could not find a finite starting point."""
