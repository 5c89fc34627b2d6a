"""Exception types shared across the package."""


class KgateError(Exception):
    """Base class for all package errors."""


class ParseError(KgateError):
    """Malformed input file. Carries a line number when one is known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(KgateError):
    """Structurally valid input that violates a domain invariant."""


class GraphError(KgateError):
    """Graph construction or lookup failure."""


class ShapeError(KgateError):
    """Tensor shape mismatch between operands or against declared dims."""


class ProviderError(KgateError):
    """Embedding lookup failure in a file-backed provider."""


class SelectionError(KgateError):
    """Selection pipeline cannot produce a knowledge pool."""


class NumericalError(KgateError):
    """Non-finite values appeared where finite numbers are required."""
