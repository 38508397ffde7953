"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Raised when array shapes violate an operation's contract."""


class FormatError(ValueError):
    """Raised for malformed container files (video or checkpoint)."""


class ConfigError(ValueError):
    """Raised for unknown keys or ill-typed values in a config."""


class TrainingAborted(RuntimeError):
    """Raised when training stops on a non-finite loss.

    The ``step`` attribute records the global step at which the abort
    happened.
    """

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step
