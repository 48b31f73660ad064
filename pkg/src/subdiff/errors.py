"""Exception types shared across the package."""


class SubdiffError(Exception):
    """Base class for all package errors."""


class NumericalError(SubdiffError):
    """Raised when an integrator or solver cannot continue (collisions, stiffness, NaN)."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class ConfigError(SubdiffError, ValueError):
    """Invalid experiment configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
