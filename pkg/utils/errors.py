from typing import Optional


class KiaeError(Exception):
    """Base class for every error raised by the KiAE services."""


class ShapeError(KiaeError, ValueError):
    pass


class DomainError(KiaeError, ValueError):
    pass


class StratificationError(DomainError):
    pass


class NumericError(KiaeError, ArithmeticError):
    def __init__(self, message: str, component: Optional[int] = None):
        super().__init__(message)
        self.component = component


class ParseError(KiaeError, ValueError):
    """A CSV cell that does not parse as a real number.

    `row` is the 1-based line in the file (the header is line 1).
    """

    def __init__(self, message: str, row: int, column: str):
        super().__init__(message)
        self.row = row
        self.column = column


class FormatError(KiaeError, ValueError):
    pass


class TrainingError(KiaeError, RuntimeError):
    pass


class DivergenceError(TrainingError):
    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class ConfigError(KiaeError, ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InternalError(KiaeError, RuntimeError):
    pass
