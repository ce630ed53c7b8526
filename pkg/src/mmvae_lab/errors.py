"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Inconsistent shapes, layouts, or run configuration."""


class InputError(ValueError):
    """Caller handed non-finite or otherwise invalid data to an operation."""


class IngestionError(ValueError):
    """A dataset file (or raw matrix) cannot be turned into a Dataset."""


class TrainingError(RuntimeError):
    """Training produced a non-finite quantity.

    Carries the epoch (and optionally batch) where the blow-up happened.
    """

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class ExperimentError(RuntimeError):
    """A multi-run experiment cannot produce a result (e.g. every run failed)."""
