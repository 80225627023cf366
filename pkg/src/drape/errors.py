"""Exception hierarchy shared by every drape module."""


class DrapeError(Exception):
    """Base class for all errors raised by this package."""


class MalformedInputError(DrapeError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TopologyError(DrapeError, ValueError):
    pass


class DegeneracyError(DrapeError, ValueError):
    pass


class DimensionError(DrapeError, ValueError):
    pass


class NumericFailure(DrapeError, FloatingPointError):
    """Raised when a loss or state becomes non-finite; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
