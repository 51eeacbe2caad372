"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class RegionalError(Exception):
    """Base class for every error raised by :mod:`regional_oc`."""


class ExprSyntaxError(RegionalError):
    """Malformed expression source.

    Carries a 1-based ``line``/``column`` and the set of tokens the parser
    would have accepted at that position.
    """

    def __init__(self, message: str, line: int, column: int, expected=()):
        self.line = line
        self.column = column
        self.expected = frozenset(expected)
        exp = ""
        if self.expected:
            exp = " (expected one of: " + ", ".join(sorted(self.expected)) + ")"
        super().__init__(f"{message} at line {line}, column {column}{exp}")


class UnknownIdentifier(ExprSyntaxError):
    pass


class EvalError(RegionalError, ArithmeticError):
    """Numerical evaluation failed (division by zero, domain error, NaN)."""


class BlowUp(EvalError):
    """Integrated state left the ball of radius 1e9."""


class NotOnInterface(RegionalError):
    pass


class DegenerateNormal(RegionalError):
    pass


class NonTangentCostate(RegionalError):
    pass


class InvalidWord(RegionalError):
    pass


class ProblemError(RegionalError):
    """A problem definition violates a structural requirement."""


class DomainError(RegionalError, ValueError):
    pass


class TangentialCrossing(RegionalError):
    """A junction is reached tangentially to the interface."""

    def __init__(self, message: str, junction: int = -1, inner: float = 0.0):
        self.junction = junction
        self.inner = inner
        super().__init__(message)


class AllStructuresInfeasible(RegionalError):
    pass


class NonConvergence(RegionalError):
    pass
