"""Exception hierarchy shared by every module of the package."""


class BanditError(Exception):
    """Base class for all errors raised by smcbandits."""


class InvalidInputError(BanditError, ValueError):
    """An argument violates a documented precondition."""


class ContractError(BanditError, RuntimeError):
    """An operation was invoked on an object that cannot honour it."""


class ConfigurationError(BanditError, ValueError):
    """A model, kernel or run configuration is inconsistent."""


class DegeneracyError(BanditError, FloatingPointError):
    """Every particle received a numerically zero likelihood."""


class NumericalError(BanditError, ArithmeticError):
    """A linear-algebra or numerical routine failed."""


class UndefinedResultError(BanditError, ZeroDivisionError):
    """A summary statistic is undefined for the given data."""


class ParseError(InvalidInputError):
    """A replay log or configuration document could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
