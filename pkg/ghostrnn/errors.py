"""Error types for the GhostRNN kit.

Every hard failure raised by the package is a ``GhostRNNError`` carrying an
``ErrorType``; the CLI maps those types onto its exit-code vocabulary.
"""

import functools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, Optional


logger = logging.getLogger("ghostrnn.errors")


class ErrorType(str, Enum):
    """Kinds of failure the kit distinguishes."""
    SHAPE_MISMATCH = "shape_mismatch"
    INVALID_CONFIG = "invalid_config"
    NON_FINITE = "non_finite"
    DIVERGENCE = "divergence"
    BAD_MAGIC = "bad_magic"
    BAD_VERSION = "bad_version"
    TRUNCATION = "truncation"
    IO_ERROR = "io_error"
    CHECK_FAILED = "check_failed"


# Exit codes used by every CLI subcommand
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGENCE = 3
EXIT_CHECK_FAILED = 4


@dataclass(eq=False)
class GhostRNNError(Exception):
    """Structured error raised by the kit.

    Attributes:
        error_type: The type of error that occurred
        message: Human-readable error message
        recoverable: Whether retrying with other inputs can succeed
        details: Additional error details for debugging
    """

    error_type: ErrorType
    message: str
    recoverable: bool = False
    details: Optional[Dict[str, Any]] = None

    def __str__(self) -> str:
        return self.message

    def to_dict(self) -> Dict[str, Any]:
        """Convert error to dictionary for JSON serialization."""
        result: Dict[str, Any] = {
            "error_type": self.error_type.value,
            "message": self.message,
            "recoverable": self.recoverable,
        }
        if self.details is not None:
            result["details"] = self.details
        return result

    @classmethod
    def shape_mismatch(cls, message: str, **details: Any) -> "ShapeError":
        """Create a shape mismatch error."""
        return ShapeError(
            error_type=ErrorType.SHAPE_MISMATCH,
            message=message,
            recoverable=True,
            details=details or None,
        )

    @classmethod
    def invalid_config(cls, message: str, **details: Any) -> "ConfigError":
        """Create an invalid configuration error."""
        return ConfigError(
            error_type=ErrorType.INVALID_CONFIG,
            message=message,
            recoverable=True,
            details=details or None,
        )

    @classmethod
    def non_finite(cls, message: str, **details: Any) -> "NonFiniteError":
        """Create an error for NaN/inf values where finite ones are required."""
        return NonFiniteError(
            error_type=ErrorType.NON_FINITE,
            message=message,
            details=details or None,
        )

    @classmethod
    def divergence(cls, message: str, **details: Any) -> "DivergenceError":
        """Create a training divergence error."""
        return DivergenceError(
            error_type=ErrorType.DIVERGENCE,
            message=message,
            details=details or None,
        )

    @classmethod
    def check_failed(cls, message: str, **details: Any) -> "GhostRNNError":
        """Create an error for a numerical check that did not pass."""
        return cls(
            error_type=ErrorType.CHECK_FAILED,
            message=message,
            details=details or None,
        )


class ShapeError(GhostRNNError, ValueError):
    """Operand shapes do not agree."""


class ConfigError(GhostRNNError, ValueError):
    """A configuration or argument value is out of range."""


class NonFiniteError(GhostRNNError, ArithmeticError):
    """A NaN or infinite value reached a place that needs finite numbers."""


class DivergenceError(GhostRNNError):
    """Training produced a non-finite loss.

    ``last_good`` holds the parameters from before the failing step when
    the trainer raised it.
    """

    last_good: Any = None


class CheckpointError(GhostRNNError):
    """A checkpoint file could not be written or parsed."""

    @classmethod
    def bad_magic(cls, found: bytes) -> "CheckpointError":
        return cls(ErrorType.BAD_MAGIC, f"bad magic: expected b'GRNN', found {found!r}")

    @classmethod
    def bad_version(cls, version: int) -> "CheckpointError":
        return cls(ErrorType.BAD_VERSION, f"unsupported checkpoint format_version {version}")

    @classmethod
    def truncation(cls, what: str, needed: int, available: int) -> "CheckpointError":
        return cls(
            ErrorType.TRUNCATION,
            f"truncation: {what} needs {needed} bytes, only {available} left",
            details={"needed": needed, "available": available},
        )

    @classmethod
    def shape(cls, message: str) -> "CheckpointError":
        return cls(ErrorType.SHAPE_MISMATCH, message)

    @classmethod
    def io_error(cls, path: str, error: OSError) -> "CheckpointError":
        return cls(ErrorType.IO_ERROR, f"I/O failure on {path}: {error}", recoverable=True)


_EXIT_CODES = {
    ErrorType.SHAPE_MISMATCH: EXIT_USAGE,
    ErrorType.INVALID_CONFIG: EXIT_USAGE,
    ErrorType.NON_FINITE: EXIT_USAGE,
    ErrorType.BAD_MAGIC: EXIT_USAGE,
    ErrorType.BAD_VERSION: EXIT_USAGE,
    ErrorType.TRUNCATION: EXIT_USAGE,
    ErrorType.IO_ERROR: EXIT_USAGE,
    ErrorType.DIVERGENCE: EXIT_DIVERGENCE,
    ErrorType.CHECK_FAILED: EXIT_CHECK_FAILED,
}


def exit_code_for(error: GhostRNNError) -> int:
    """Map an error onto the CLI exit-code vocabulary."""
    return _EXIT_CODES.get(error.error_type, EXIT_USAGE)


def cli_errors(func: Callable[..., int]) -> Callable[..., int]:
    """Decorator that turns kit errors escaping a subcommand into exit codes.

    The structured error is logged to stderr; the command returns the
    mapped exit code instead of raising, so scripts can branch on it.
    """
    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> int:
        try:
            return func(*args, **kwargs)
        except GhostRNNError as e:
            code = exit_code_for(e)
            logger.error("%s failed (%s): %s", func.__name__, e.error_type.value, e.message)
            logger.debug("error details: %s", e.to_dict())
            return code
    return wrapper


__all__ = [
    "ErrorType",
    "GhostRNNError",
    "ShapeError",
    "ConfigError",
    "NonFiniteError",
    "DivergenceError",
    "CheckpointError",
    "EXIT_OK",
    "EXIT_USAGE",
    "EXIT_DIVERGENCE",
    "EXIT_CHECK_FAILED",
    "exit_code_for",
    "cli_errors",
]
