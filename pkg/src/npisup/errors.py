"""Exception types shared across the package."""


class NpiError(Exception):
    """Base class for all package errors."""


class InputShapeError(NpiError, ValueError):
    """An array or sequence has the wrong shape or length."""


class DegenerateInputError(NpiError, ValueError):
    """Input is well-formed but mathematically degenerate (zero pilot, zero norm, ...)."""


class ConfigError(NpiError, ValueError):
    """A configuration violates its invariants."""


class ContractError(NpiError, RuntimeError):
    """An API was used out of order, e.g. backward with a stale cache."""


class TrainingDivergenceError(NpiError, RuntimeError):
    """Non-finite gradients or losses were encountered during training."""


class InferenceError(NpiError, RuntimeError):
    """A network produced non-finite activations at inference time."""


class DependencyError(NpiError, RuntimeError):
    """A training phase was requested before its predecessor phases ran."""

    def __init__(self, missing: str, message: str | None = None):
        self.missing = missing
        super().__init__(message or f"missing predecessor phase: {missing}")


class FormatError(NpiError, ValueError):
    """A persisted file failed validation on load."""
