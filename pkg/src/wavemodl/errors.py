"""Exception types shared across the package."""


class WavemodlError(Exception):
    """Base class for all package errors."""


class InvalidInputError(WavemodlError, ValueError):
    """An argument violates a documented precondition."""


class NumericalFailureError(WavemodlError, ArithmeticError):
    """A solver or training step produced non-finite values.

    ``iteration`` records the zero-based iteration index at which the
    failure was detected, when that is meaningful.
    """

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class CorruptFileError(WavemodlError, IOError):
    """An on-disk container failed structural validation."""


class ConfigError(WavemodlError, ValueError):
    """An experiment configuration is malformed."""


class PipelineError(WavemodlError):
    """Wraps a module failure with the pipeline stage where it occurred."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause
