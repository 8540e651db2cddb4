"""Exception types raised across the package."""


class PureRepError(Exception):
    """Base class for all package errors."""


class ConfigError(PureRepError, ValueError):
    pass


class UsageError(ConfigError):
    pass


class IngestError(PureRepError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ConstantVariableError(IngestError):
    pass


class WindowTooLongError(PureRepError, ValueError):
    pass


class FrequencyCountError(PureRepError, ValueError):
    pass


class WindowSizeError(PureRepError, ValueError):
    pass


class ShapeError(PureRepError, ValueError):
    pass


class NonFiniteError(PureRepError, FloatingPointError):
    pass


class NormalizationError(PureRepError, ValueError):
    pass


class DivergenceError(PureRepError, FloatingPointError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class SingularMatrixError(PureRepError, ArithmeticError):
    pass


class ProbeError(PureRepError, ValueError):
    pass


class CheckpointMismatchError(PureRepError, ValueError):
    pass
