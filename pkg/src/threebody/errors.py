"""Exception hierarchy shared across the package."""


class ThreeBodyError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ThreeBodyError, ValueError):
    """Inconsistent or unattainable run configuration."""


class CollisionError(ThreeBodyError):
    """Two bodies came closer than the singularity threshold.

    ``pair`` holds the zero-based body indices of the colliding pair, when known.
    """

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class NearCollisionError(CollisionError):
    """Adaptive step size underflowed, which signals a close encounter."""


class IntegrationError(ThreeBodyError):
    """Non-finite state or other integrator failure."""


class LoadError(ThreeBodyError):
    """A persisted document could not be parsed or failed validation."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
