"""
Error Handling Module
Custom exceptions, CLI error mapping and graceful error contexts
"""

import functools
import sys
from typing import Any, Callable, Optional, Sequence

from logger import logger, log_error


class CaptionerError(Exception):
    """Base exception for the captioning system"""
    pass


class ShapeError(CaptionerError):
    """Tensor shape mismatch inside a differentiable primitive"""

    def __init__(self, primitive: str, *shapes: Sequence[int], detail: str = ""):
        self.primitive = primitive
        self.shapes = [tuple(s) for s in shapes]
        shape_text = ", ".join(str(s) for s in self.shapes)
        message = f"{primitive}: incompatible shapes {shape_text}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class ValidationError(CaptionerError):
    """Argument or precondition violation"""
    pass


class DataFormatError(CaptionerError):
    """Malformed dataset or JSONL input"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointError(CaptionerError):
    """Corrupt, truncated or incompatible checkpoint"""
    pass


class ConfigError(CaptionerError):
    """Invalid configuration file or value"""
    pass


def require(condition: bool, message: str, error: type = ValidationError):
    """Raise `error(message)` unless condition holds"""
    if not condition:
        raise error(message)


def handle_cli_errors(exit_code: int = 2):
    """
    Decorator mapping expected failures to a nonzero exit code

    Args:
        exit_code: Code returned when a CaptionerError or OSError escapes

    Usage:
        @handle_cli_errors()
        def run_cli(argv):
            ...
    """
    def decorator(func: Callable[..., int]) -> Callable[..., int]:
        @functools.wraps(func)
        def wrapper(*args, **kwargs) -> int:
            try:
                return func(*args, **kwargs)
            except (CaptionerError, OSError) as e:
                log_error(e, {"function": func.__name__})
                print(f"error: {e}", file=sys.stderr)
                return exit_code

        return wrapper
    return decorator


class ErrorContext:
    """Context manager for error handling"""

    def __init__(self, operation: str, raise_on_error: bool = True):
        self.operation = operation
        self.raise_on_error = raise_on_error

    def __enter__(self):
        logger.debug(f"Starting operation: {self.operation}")
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> Any:
        if exc_type is not None and issubclass(exc_type, Exception):
            log_error(exc_val, {"operation": self.operation})

            if self.raise_on_error:
                return False
            logger.info(f"Operation {self.operation} failed, continuing...")
            return True
        return False
