"""Exception types shared across the toolkit."""


class LhsiwbError(Exception):
    """Base class for all toolkit errors."""


class ContractViolation(LhsiwbError):
    """A documented precondition was violated by the caller."""


class NumericsError(LhsiwbError):
    """A numerical failure (non-finite value) was detected, with location info."""


class CheckpointError(LhsiwbError):
    """A checkpoint file could not be read, or does not match the model."""


class ImageIOError(LhsiwbError):
    """An image file could not be decoded or encoded."""
