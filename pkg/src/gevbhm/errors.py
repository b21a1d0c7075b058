"""Exception hierarchy.

The CLI maps each category onto a distinct exit code.
"""

from __future__ import annotations


class GevBhmError(Exception):
    """Base class for all package errors."""

    category = "error"


class DataError(GevBhmError, ValueError):
    """Invalid input data. Carries the offending file and line when known."""

    category = "data"

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ConfigError(GevBhmError, ValueError):
    category = "config"


class NumericalError(GevBhmError, ArithmeticError):
    """Factorization or optimizer failure that cannot be recovered from."""

    category = "numerical"


class StoreError(GevBhmError):
    """Draw store missing, empty, or inconsistent with the run configuration."""

    category = "store"
