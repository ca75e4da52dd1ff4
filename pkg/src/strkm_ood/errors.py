"""Exception types shared across the toolkit.

Each class carries the CLI exit code it maps to.
"""


class StrkmError(Exception):
    exit_code = 1


class ValidationError(StrkmError, ValueError):
    """Bad shapes, bad parameter values, or inputs outside a documented domain."""

    exit_code = 1


class DecompositionError(ValidationError):
    """A matrix factorization could not be completed (e.g. rank deficiency)."""


class FormatError(StrkmError):
    """A file on disk does not follow the expected layout."""

    exit_code = 2

    def __init__(self, message, *, line=None, offset=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.offset = offset


class DivergenceError(StrkmError, ArithmeticError):
    """Training produced a non-finite loss or gradient."""

    exit_code = 3
