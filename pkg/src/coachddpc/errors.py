"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition or type invariant."""


class ConfigurationError(ValueError):
    """A parameter or scenario file is incomplete or inconsistent."""


class IntegrationError(RuntimeError):
    """The thermal integration left the physical sanity band."""


class PipelineError(RuntimeError):
    """Raw data could not be turned into usable trajectories."""
