class SLMError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(SLMError, ValueError):
    pass


class DegenerateInputError(SLMError, ValueError):
    """Input is valid but admits no answer (e.g. a uniform vector cannot be rescaled)."""


class TrainingDivergedError(SLMError, RuntimeError):
    pass
