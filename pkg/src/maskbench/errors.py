"""Exception types shared across the toolkit."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class InputError(ValueError):
    """Malformed or degenerate input data."""


class ResourceError(RuntimeError):
    """A requested computation exceeds an enumeration or size cap."""


class NumericError(ArithmeticError):
    """A numerical routine could not produce a finite answer."""


class TrainingError(RuntimeError):
    """Optimization diverged or hit an unrecoverable state."""


class CheckpointError(ValueError):
    """Checkpoint cannot be read or does not match the requested model."""
