"""Exception hierarchy for ShiftScope."""
from typing import List, Optional


class ShiftScopeError(Exception):
    """Base class for all errors raised by the toolkit."""


class DimensionError(ShiftScopeError):
    """Raised when shapes or dimensions do not match."""


class InputError(ShiftScopeError):
    """Raised for out-of-range parameters or non-finite input values."""


class ResonanceError(ShiftScopeError):
    """Raised when a symbol or diagonal that must be inverted vanishes."""

    def __init__(self, message: str, modulus: Optional[float] = None):
        super().__init__(message)
        self.modulus = modulus


class BracketError(ShiftScopeError):
    """Raised when no upper bracket satisfies a bisection criterion."""


class EstimateInvalidError(ShiftScopeError):
    """Raised when a convergence estimate is not defined (origin inside the ellipse)."""


class ConfigError(ShiftScopeError):
    """Raised when a run configuration does not validate."""

    def __init__(self, violations: List[str]):
        super().__init__("; ".join(violations))
        self.violations = violations
