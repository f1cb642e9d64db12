"""Exception hierarchy shared by every module."""

from __future__ import annotations


class OdmrScreenError(Exception):
    """Base class for all package errors."""


class ContractError(OdmrScreenError, ValueError):
    """A precondition of an operation was violated by the caller."""


class MalformedInputError(OdmrScreenError, ValueError):
    """An input file could not be parsed."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataIntegrityError(OdmrScreenError, ValueError):
    """Input data parsed but violates a required symmetry or normalization."""


class DegenerateInputError(OdmrScreenError, ValueError):
    """Input is well formed but carries no usable signal."""


class DegenerateModelError(OdmrScreenError, ValueError):
    """A model has no unique solution (e.g. reducible rate matrix)."""


class CapacityError(OdmrScreenError, MemoryError):
    """A requested object exceeds the configured size cap."""


class SingularityError(OdmrScreenError, ArithmeticError):
    """A vanishing denominator was met."""


class AlgorithmicFailure(OdmrScreenError, RuntimeError):
    """An algorithm failed to produce a result (e.g. filter exhaustion)."""
