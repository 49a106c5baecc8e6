"""Exception hierarchy shared by all hjsys modules."""

from __future__ import annotations


class HJSysError(Exception):
    """Base class for every error raised by hjsys."""


class MonotonicityViolated(HJSysError):
    pass


class NotNonnegative(HJSysError):
    pass


class NotIrreducible(HJSysError):
    pass


class RowSumsNonzero(HJSysError):
    pass


class DegenerateCofactor(HJSysError):
    pass


class KernelDimNotOne(HJSysError):
    pass


class IndexOutOfRange(HJSysError, IndexError):
    pass


class DegenerateGrid(HJSysError):
    pass


class CflViolated(HJSysError):
    pass


class NonFiniteValue(HJSysError):
    pass


class NotConverged(HJSysError):
    pass


class BoundViolated(HJSysError):
    pass


class ExtrapolationUnstable(HJSysError):
    pass


class PreconditionFailed(HJSysError):
    pass


class EmptyAubrySet(HJSysError):
    pass


class InsufficientHorizon(HJSysError):
    pass


class CellNotInAubrySet(HJSysError):
    pass


class StabilityViolated(HJSysError):
    pass


class SchemaError(HJSysError):
    pass


class AuditFatal(HJSysError):
    pass


class ExpressionSyntaxError(HJSysError, SyntaxError):
    """Malformed expression; ``position`` is the 0-based character offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position
