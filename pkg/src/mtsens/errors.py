"""Exception types shared across the package."""


class DataError(ValueError):
    """Input data or configuration violates a documented invariant."""


class NumericError(RuntimeError):
    """A numerical routine failed to produce a usable result."""
