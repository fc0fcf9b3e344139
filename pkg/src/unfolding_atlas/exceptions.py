"""Error types raised across the package."""

from __future__ import annotations


class AtlasError(Exception):
    """Base class for all package errors."""


class ParameterShapeError(AtlasError, ValueError):
    pass


class DomainError(AtlasError, ValueError):
    pass


class EscapeError(AtlasError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class NoConvergenceError(AtlasError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class SpectralDegeneracyError(AtlasError):
    pass


class NearResonanceError(AtlasError):
    def __init__(self, message: str, monomial: tuple[int, int, int] | None = None):
        super().__init__(message)
        self.monomial = monomial


class RadiusTooLargeError(AtlasError):
    pass


class BudgetError(AtlasError):
    pass


class BracketError(AtlasError):
    pass


class DegenerateTangencyError(AtlasError):
    pass


class NotUnfoldingError(AtlasError):
    pass


class TransitError(AtlasError):
    pass


class OutsideBoxError(AtlasError):
    pass


class StripError(AtlasError):
    pass


class NormalizationError(AtlasError):
    pass


class CascadeStructureError(AtlasError):
    pass


class ProbeError(AtlasError):
    pass
