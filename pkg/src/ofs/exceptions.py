"""Exception types shared across the package."""


class OfsError(Exception):
    """Base class for errors raised by this package."""


class NotPositiveDefiniteError(OfsError):
    """A matrix required to be positive definite failed certification."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class IllConditionedError(OfsError):
    """A linear operation was refused because of excessive condition number."""

    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class CapabilityError(OfsError):
    """An objective model was asked for a capability it does not declare."""


class SamplerDiagnosticError(OfsError):
    """A sampler detected a pathology (no finite evaluations, dead chain)."""


class EstimationError(OfsError):
    """A sandwich-component estimate could not be produced."""


class ConfigError(OfsError):
    """A run configuration failed validation."""
