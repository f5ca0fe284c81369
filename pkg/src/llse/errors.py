"""Exception types shared across the package."""


class LLSEError(Exception):
    """Base class for all package errors."""


class DimensionError(LLSEError, ValueError):
    """Array shapes are inconsistent with an operation's contract."""


class GraphError(LLSEError, RuntimeError):
    """Misuse of the recorded computation graph (e.g. a second backward)."""


class ContractError(LLSEError, ValueError):
    """A call violates a documented precondition."""


class ConfigError(LLSEError, ValueError):
    pass


class DataError(LLSEError):
    """Missing, empty or malformed input data."""


class WavParseError(DataError, ValueError):
    pass


class CheckpointError(DataError, ValueError):
    pass


class NumericError(LLSEError, ArithmeticError):
    """Non-finite values or failed numerical checks."""
