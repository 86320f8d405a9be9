"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Arrays with incompatible or invalid shapes."""


class ConfigError(ValueError):
    """Invalid configuration or out-of-range hyper-parameter."""


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names which one."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
