"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Inconsistent dimensions or invalid configuration values."""


class NumericsError(RuntimeError):
    """A numerical routine failed: non-positive-definite matrix, divergence,
    or an iteration that did not converge within its budget."""


class CheckpointError(ValueError):
    """A codec checkpoint file is malformed or has an incompatible version."""
