"""Exception types shared across the package."""


class NrnnError(Exception):
    """Base class for all package errors."""


class ConfigurationError(NrnnError):
    """Invalid arguments, shapes, or configuration values."""


class NumericalError(NrnnError):
    """A computation produced results outside its numerical contract."""


class IntegrationDivergedError(NumericalError):
    """A trajectory produced non-finite values.

    Carries the index of the offending integration step.
    """

    def __init__(self, step_index: int, message: str | None = None):
        self.step_index = step_index
        super().__init__(message or f"non-finite state at integration step {step_index}")
