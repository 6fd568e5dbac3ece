"""Exception hierarchy shared by the numerical modules and the CLI."""

import pathlib
from typing import Optional, Union


class CostcoError(Exception):
    """Base class for all errors raised by costco."""


class DimensionError(CostcoError, ValueError):
    """Raised when shapes, modes, coordinates, or sparsity budgets don't conform."""


class DataFormatError(CostcoError, ValueError):
    """Raised when an input file is malformed. Rendered as `path:line: message`."""

    def __init__(
        self,
        message: str,
        path: Optional[Union[str, pathlib.Path]] = None,
        line: Optional[int] = None,
    ):
        self.message = message
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:"
        if line is not None:
            location += f"{line}:"
        super().__init__(f"{location} {message}" if location else message)


class DegenerateComponentError(CostcoError, ArithmeticError):
    """Raised when a rank-1 component collapses: its truncated update vector is all
    zeros, or its weight is zero."""

    def __init__(self, message: str, rank_index: int, mode: Optional[str] = None):
        self.rank_index = rank_index
        self.mode = mode
        super().__init__(message)


class AllRestartsDegenerateError(CostcoError, RuntimeError):
    """Raised when every restart of a fit aborted with a degenerate component."""


class ConvergenceError(CostcoError, ArithmeticError):
    """Raised when power iteration exhausts its iteration budget."""


class UsageError(CostcoError):
    """Raised for command-line misuse: unknown flags, bad values, unknown config
    keys."""


class UnsupportedTypeAnnotationError(CostcoError, TypeError):
    """Raised when a configuration dataclass field can't be mapped to a flag."""
