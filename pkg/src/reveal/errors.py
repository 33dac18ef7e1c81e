class RevealError(Exception):
    """Base class for package errors."""


class ConfigError(RevealError, ValueError):
    pass


class SchemaError(RevealError, ValueError):
    def __init__(self, message, offenders=()):
        super().__init__(message)
        self.offenders = tuple(offenders)


class ParseError(RevealError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class InfeasibleMatchingError(RevealError):
    def __init__(self, message, shortfall=0):
        super().__init__(message)
        self.shortfall = shortfall


class ImputationError(RevealError, ValueError):
    pass


class TrainingDiverged(RevealError, FloatingPointError):
    """Raised when the loss becomes non-finite; carries the last good model."""

    def __init__(self, message, model=None, log=None):
        super().__init__(message)
        self.model = model
        self.log = log


class ConvergenceError(RevealError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual
