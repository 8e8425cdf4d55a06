"""Exception hierarchy shared across the package.

Every error raised deliberately by this package derives from GpHazardError,
so callers (and the CLI) can separate our failures from genuine bugs.
"""


class GpHazardError(Exception):
    """Base class for package errors."""


class DomainError(GpHazardError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class ConfigError(GpHazardError, ValueError):
    """A configuration document is malformed or inconsistent."""


class NumericError(GpHazardError, ArithmeticError):
    """A numerical procedure failed (non-finite values, factorization, ...)."""


class CapacityError(GpHazardError):
    """An enumeration would exceed the supported problem size."""


class GenerationError(GpHazardError, RuntimeError):
    """Simulation could not produce the requested data."""
