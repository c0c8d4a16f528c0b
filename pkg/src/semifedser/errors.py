"""Exception types raised across the package."""


class FedSerError(Exception):
    """Base class for all package errors."""


class ConfigError(FedSerError, ValueError):
    """Invalid configuration value or combination."""


class ShapeError(FedSerError, ValueError):
    """Array or parameter shapes do not line up."""


class NumericError(FedSerError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class InvalidLabelError(FedSerError, ValueError):
    pass


class ConsistencyError(FedSerError, RuntimeError):
    """Client pool bookkeeping was violated."""


class ParseError(FedSerError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(ParseError):
    pass


class SealedAccessError(FedSerError, PermissionError):
    """Ground-truth labels of masked samples were read outside evaluation."""
