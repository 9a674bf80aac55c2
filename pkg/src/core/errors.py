# src/core/errors.py
"""
Exception hierarchy shared by every module of the toolkit.

The CLI catches BvpSymError and turns it into exit status 2.
"""

from typing import Any, Dict, Optional


class BvpSymError(Exception):
    """Base class for every error raised by the toolkit"""


class ConstructionError(BvpSymError):
    """An expression or object could not be built (unregistered symbol, bad binding)"""


class ParseError(BvpSymError):
    """DSL input could not be parsed; str() is 'line:col: message'"""

    def __init__(self, message: str, line: int = 0, col: int = 0, path: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.col = col
        self.path = path

    def __str__(self):
        location = f"{self.line}:{self.col}: {self.message}"
        if self.path:
            return f"{self.path}:{location}"
        return location


class UnsupportedError(BvpSymError):
    """The requested branch is outside what the toolkit implements"""


class IndeterminateError(BvpSymError):
    """An equality or a limit could not be decided"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegenerateTransformError(BvpSymError):
    """Equivalence transform parameters violate non-degeneracy"""


class NumericalError(BvpSymError):
    """Blow-up, positivity loss, complex roots and other numerical failures"""

    def __init__(self, message: str, location: Any = None):
        super().__init__(message)
        self.location = location

    def __str__(self):
        base = super().__str__()
        if self.location is None:
            return base
        return f"{base} (at {self.location})"
