"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class TdeError(Exception):
    """Base class for every error raised by tdekit."""


class ParseError(TdeError, ValueError):
    """Malformed expression text.

    ``offset`` is the 0-based byte offset of the offending token.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class FieldError(TdeError, ValueError):
    """A vector field could not be evaluated at the requested point."""


class DomainError(FieldError):
    pass


class ZeroFieldError(FieldError):
    pass


class NonFiniteError(FieldError):
    pass


class KinkError(TdeError):
    """Point lies on (or a stencil straddles) a conditional-branch boundary."""


class OdeError(TdeError):
    pass


class GuardExitError(TdeError):
    """An integration left its guard box before reaching the requested time."""

    def __init__(self, message: str, exit_time: float):
        super().__init__(message)
        self.exit_time = exit_time


class ChartError(TdeError):
    """A local solution chart cannot be built (or used) at this point."""


class BracketError(ChartError):
    pass
