"""Exception hierarchy shared by the solvers and the command line."""


class BSDEError(Exception):
    """Base class for every error raised by rwbsde."""


class ExpressionError(BSDEError, ValueError):
    """Malformed or unusable expression source."""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


class EvaluationError(BSDEError, ArithmeticError):
    """Domain error while evaluating an expression (ln of a nonpositive number, ...)."""


class ValidationError(BSDEError):
    """A step-size or stability condition failed under strict validation."""


class NumericalError(BSDEError):
    """An inner solve did not converge or a solution exploded."""


class QuadratureError(NumericalError):
    """Gauss-Hermite order escalation did not reach the requested agreement."""


class ConfigError(BSDEError):
    """Unreadable, incomplete or inconsistent run configuration."""
