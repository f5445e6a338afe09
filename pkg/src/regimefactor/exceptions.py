"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input rejected before any computation took place."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (singular system, non-convergence, ...)."""
