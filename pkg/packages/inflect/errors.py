"""Exception hierarchy shared by every inflect module."""


class InflectError(Exception):
    """Base class for all errors raised by inflect."""


class InvalidInputError(InflectError, ValueError):
    pass


class DegenerateInputError(InvalidInputError):
    """A profile or matrix for which the requested normalization is undefined."""


class UndefinedInputError(InvalidInputError):
    """Input for which the metric has no value (e.g. zero variance)."""


class ConfigError(InvalidInputError):
    pass


class NumericError(InflectError, ArithmeticError):
    """Non-finite values detected where finite values are required."""


class StateError(InflectError, RuntimeError):
    """Operation called in the wrong lifecycle state."""


class ConflictError(StateError):
    pass


class RunFailure(InflectError, RuntimeError):
    """A training run diverged or otherwise could not complete.

    `diagnostics` carries whatever was recorded before the failure so the
    caller can dump it.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
