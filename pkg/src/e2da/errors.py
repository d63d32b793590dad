"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or physically meaningless."""


class SimulationError(RuntimeError):
    """The simulator reached a state that violates one of its own invariants."""


class TrainingFault(RuntimeError):
    """Training produced a non-finite loss or parameter."""
