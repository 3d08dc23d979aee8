"""
Exception hierarchy shared by every module of the package.

Value problems derive from ValueError, solver failures from RuntimeError, so
callers that only know the builtin types still catch them.
"""
from typing import Any, Optional


class BoostRpfError(Exception):
    """Base class for all package errors"""


class GridError(BoostRpfError, ValueError):
    """The grid description violates the radial network model"""


class NotATree(GridError):
    pass


class NoSlack(GridError):
    pass


class MultipleSlack(GridError):
    pass


class DanglingBranch(GridError):
    pass


class InvalidImpedance(GridError):
    pass


class DimensionMismatch(BoostRpfError, ValueError):
    pass


class MissingTruth(BoostRpfError, ValueError):
    pass


class EmptyDataset(BoostRpfError, ValueError):
    pass


class EmptyInput(BoostRpfError, ValueError):
    pass


class BadConfig(BoostRpfError, ValueError):
    pass


class SchemaError(BoostRpfError, ValueError):
    pass


class VersionMismatch(SchemaError):
    pass


class UnknownMethod(BoostRpfError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class NonConvergence(BoostRpfError, RuntimeError):
    """
    An iterative solver ran out of iterations.

    Carries the last iterate so callers can inspect how far it got.
    """

    def __init__(self, message: str, state: Optional[Any] = None, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.state = state
        self.residual = residual
        self.iterations = iterations
