"""Exception types shared across the package."""


class WolffkitError(Exception):
    """Base class for all wolffkit errors."""


class ValidationError(WolffkitError):
    """Malformed input: bad exponents, negative masses, unbounded specs."""


class NonIntegrableKernel(WolffkitError):
    """Radial kernel is not integrable for the requested exponents (alpha*p >= n)."""


class Divergent(WolffkitError):
    """A spatial integral diverges for the requested exponents."""


class IncompleteTable(WolffkitError):
    """An embedding-constant table is missing a required entry."""
