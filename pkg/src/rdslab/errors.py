"""Exception hierarchy shared by every rdslab module."""

from __future__ import annotations


class RDSLabError(Exception):
    """Base class for all rdslab errors."""


class EdgeListParseError(RDSLabError, ValueError):
    """Malformed record in an edge-list or attribute file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DomainError(RDSLabError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class DimensionError(RDSLabError, ValueError):
    pass


class ConstructionError(RDSLabError, ValueError):
    """A graph or tree could not be built from the given input."""


class DegenerateError(RDSLabError, ValueError):
    """The input leads to a degenerate object (zero degree, constant data, ...)."""


class CapacityError(RDSLabError, ValueError):
    """Problem size exceeds a configured cap."""


class NumericalError(RDSLabError, ArithmeticError):
    pass


class ConsistencyError(RDSLabError, ValueError):
    """Two inputs that must agree with each other do not."""


class NotApplicableError(RDSLabError, ValueError):
    pass


class ShapeError(RDSLabError, ValueError):
    """A tree does not have the shape an operation requires."""


class ThresholdViolationError(RDSLabError, ValueError):
    """The branching factor is at or above the critical threshold m < lambda_2^-2."""


class ExtinctionError(RDSLabError, RuntimeError):
    """A Galton-Watson tree kept going extinct past the restart budget."""


class DataError(RDSLabError, KeyError):
    pass


class ConfigError(RDSLabError, ValueError):
    pass


class PreconditionError(RDSLabError, ValueError):
    pass
