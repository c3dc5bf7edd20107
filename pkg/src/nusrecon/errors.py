"""Exception types shared across the package."""


class ValidationError(ValueError):
    """A value violates a documented invariant. ``field`` names the offender."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class UnsupportedModeError(ValueError):
    """Operation invoked on an input mode it does not support (e.g. plane VE)."""


class GenerationError(RuntimeError):
    """Schedule generation failed to satisfy its target; retry with a new seed."""


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or mismatched batch)."""
