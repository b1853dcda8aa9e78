"""
Grammar Core Errors
Exception hierarchy shared by the grammar modules.
"""

from typing import Any, Optional, Tuple


class GrammarError(Exception):
    """Base class for every grammar-level failure."""


class SymbolTableError(GrammarError):
    """Raised when state, goal and terminal symbols overlap or are malformed."""


class GrammarFormatError(GrammarError):
    """Raised when a textual grammar cannot be parsed."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class GrammarValidationError(GrammarError):
    """Raised when an operation requires a valid grammar and gets an invalid one."""

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report


class TrajectoryFormatError(GrammarError):
    """Raised when a string does not have the state-goal trajectory shape."""


class DerivationError(GrammarError):
    """Raised when a derivation cannot even start."""


class ExtractionError(GrammarError):
    """Raised when a policy cannot be turned into a grammar."""

    def __init__(self, message: str, history: Optional[Tuple[str, ...]] = None):
        super().__init__(message)
        self.history = history
