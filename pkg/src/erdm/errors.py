"""Exception types shared across the package."""


class ERDMError(Exception):
    """Base class for all package errors."""


class PreconditionError(ERDMError, ValueError):
    """An argument is outside the domain of an operation."""


class StructuralError(ERDMError, ValueError):
    """Array shapes or index ranges are inconsistent."""


class ConfigError(ERDMError, ValueError):
    """A configuration value is missing, unknown or invalid.

    The offending field name is stored in ``field`` and repeated in the message.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class StateError(ERDMError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class DivergenceError(ERDMError, RuntimeError):
    """A sampler, trainer or simulator produced non-finite or exploding values."""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class FormatError(ERDMError, ValueError):
    """A binary array file is malformed, truncated or of the wrong version."""
