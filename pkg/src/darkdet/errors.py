"""Exception hierarchy shared by every darkdet module."""


class DarkdetError(Exception):
    """Base class for all errors raised by darkdet."""


class StructuralError(DarkdetError, ValueError):
    """Tensor or graph shapes do not fit together."""


class NumericError(DarkdetError, ArithmeticError):
    pass


class CfgError(DarkdetError, ValueError):
    """Malformed or inconsistent network configuration."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class WeightsError(DarkdetError, ValueError):
    """Binary weight file does not match the graph."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ImageError(DarkdetError, ValueError):
    pass


class AnnotationError(DarkdetError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ReportError(DarkdetError, ValueError):
    pass


class UndefinedMetricError(DarkdetError, ArithmeticError):
    """A metric whose denominator is zero was requested."""
