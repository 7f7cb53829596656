"""Exception hierarchy shared by every module and mapped to CLI exit codes."""

from __future__ import annotations


class DeepSurrogateError(Exception):
    """Base class for all errors raised by deepsurrogate."""

    exit_code: int = 1


class ConfigurationError(DeepSurrogateError, ValueError):
    """Raised when a configuration or scenario specification is invalid."""

    exit_code = 2


class UsageError(DeepSurrogateError, ValueError):
    """Raised when an operation is called with arguments it cannot accept."""

    exit_code = 2


class ShapeError(DeepSurrogateError, ValueError):
    """Raised when tensor shapes do not line up."""

    exit_code = 2


class NumericError(DeepSurrogateError, ArithmeticError):
    """Raised when a computation produces non-finite or singular values."""

    exit_code = 3


class DecompositionError(NumericError):
    """Raised when a Cholesky factorization meets a non-positive pivot."""

    def __init__(self, pivot: int, message: str | None = None) -> None:
        self.pivot = pivot
        super().__init__(
            message or f"matrix is not positive definite (failing pivot {pivot})"
        )


class TrainingDivergedError(NumericError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, epoch: int, step: int, loss: float) -> None:
        self.epoch = epoch
        self.step = step
        self.loss = loss
        super().__init__(
            f"training diverged at epoch {epoch}, step {step} (loss={loss})"
        )


class FormatError(DeepSurrogateError, ValueError):
    """Raised when a file has the wrong header, version or columns."""

    exit_code = 4
