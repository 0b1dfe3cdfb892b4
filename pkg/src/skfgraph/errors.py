"""Exception hierarchy shared across the package."""


class SkfGraphError(Exception):
    """Base class for all package errors."""


class ModelError(SkfGraphError, ValueError):
    """An SLDS model violates one of its structural invariants."""


class PreconditionError(SkfGraphError, ValueError):
    """An operation was called with arguments outside its domain."""


class NumericalError(SkfGraphError, ArithmeticError):
    """A factorization or solve failed (singular or indefinite matrix)."""


class CapacityError(SkfGraphError, RuntimeError):
    """An enumeration would exceed the configured size cap."""
