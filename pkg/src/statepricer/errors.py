"""Exception types shared across the engine.

The CLI maps these onto exit codes: configuration problems are usage errors,
numerical blow-ups are runtime failures.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration / inputs."""


class SimulationError(RuntimeError):
    """Non-finite or otherwise unusable values produced during simulation."""


class EstimatorError(RuntimeError):
    """A regression or conditional-expectation estimator could not be fit."""
