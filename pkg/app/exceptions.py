"""Exception hierarchy shared by every pcurve service."""

from typing import List, Optional, Tuple


class PCurveError(Exception):
    """Base class for all errors raised by the package."""


# symfunc / geometry

class NotInConeError(PCurveError):
    """A spectrum (or a node's curvature vector) left the open cone."""

    def __init__(self, message: str, index: Optional[int] = None, margin: Optional[float] = None):
        super().__init__(message)
        self.index = index
        self.margin = margin


class OperatorOverflowError(PCurveError):
    pass


class EigenSolverError(PCurveError):
    pass


class GrowthHypothesisError(PCurveError):
    pass


# fexpr

class ExprSyntaxError(PCurveError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ExprNameError(PCurveError):
    pass


class ExprDomainError(PCurveError):
    pass


# grid

class DomainError(PCurveError):
    pass


class GridError(PCurveError):
    pass


# solver

class HypothesisError(PCurveError):
    pass


class InitialGuessError(PCurveError):
    def __init__(self, message: str, node: Optional[int] = None):
        super().__init__(message)
        self.node = node


class SolverError(PCurveError):
    """Numerical failure of the discrete solve (exit status 2)."""


class LineSearchError(SolverError):
    pass


class NewtonDivergenceError(SolverError):
    pass


class LinearSolveError(SolverError):
    pass


class HomotopyStallError(SolverError):
    def __init__(self, message: str, last_t: float, trace: List[Tuple[float, float]]):
        super().__init__(message)
        self.last_t = last_t
        self.trace = trace


class ShootingError(SolverError):
    pass


class RadialConeExitError(SolverError):
    pass


# artifacts

class ArtifactError(PCurveError):
    """Reading a configuration or writing an output file failed."""
