"""Exception types shared across the package."""


class TrimpcError(Exception):
    """Base class for all package errors."""


class RingOverflowError(TrimpcError, OverflowError):
    """A real value does not fit the ring at the requested scale."""


class ShapeMismatchError(TrimpcError, ValueError):
    """Tensor shapes or scales are inconsistent for the requested operation."""


class StreamExhaustedError(TrimpcError):
    """A PRF stream ran out of counter space."""


class TransportError(TrimpcError):
    """Channel failure: disconnect, timeout, or malformed frame."""


class PhaseError(TransportError):
    """A message was sent or received under the wrong protocol phase."""


class HandshakeError(TransportError):
    """Session setup failed: parties disagree on parameters or version."""


class DesyncError(TrimpcError):
    """Offline-prepared randomness does not match the online op sequence."""


class ConfigError(TrimpcError, ValueError):
    """Invalid session or job configuration."""


class DataError(TrimpcError, ValueError):
    """Dataset parsing or validation failure."""
