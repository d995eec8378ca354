"""Exception types raised by the solver."""


class PolTraceError(Exception):
    """Base class for all errors raised by poltrace."""


class InvalidPartitionError(PolTraceError, ValueError):
    """A layer decomposition violates its size constraints."""


class FactorizationError(PolTraceError, RuntimeError):
    """A local factorization failed (singular pivot or residual check)."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class ResourceError(PolTraceError, MemoryError):
    """A requested computation exceeds a configured size or memory cap."""


class ContractError(PolTraceError, ValueError):
    """An argument does not conform to the shape an operation expects."""
