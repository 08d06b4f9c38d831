"""Exception types shared across the package."""


class MibError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MibError, ValueError):
    """Shapes, dimensions or settings that cannot work together."""


class InputError(MibError, ValueError):
    """Malformed or empty data handed to an operation."""


class StateError(MibError, RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class DivergenceError(MibError, RuntimeError):
    """Training produced a non-finite loss term."""

    def __init__(self, term: str, epoch: int, step: int):
        self.term = term
        self.epoch = epoch
        self.step = step
        super().__init__(f"non-finite value in loss term {term!r} at epoch {epoch}, step {step}")
