"""Exception types shared across modules."""


class FormatError(ValueError):
    """A file does not follow the format it claims to be in."""


class DivergenceError(RuntimeError):
    """The time stepping produced a non-finite value."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite pressure detected at step {step}")


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names which one."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


class ConfigError(ValueError):
    """A simulation config failed schema validation; ``field`` names the key."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
