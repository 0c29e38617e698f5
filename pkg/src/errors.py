"""
Error hierarchy for the immersion toolkit.

Every failure raised by the library derives from ImmersionError so the CLI
can map it to an exit code. Errors caused by bad input additionally derive
from ValueError.
"""

from typing import Optional


class ImmersionError(Exception):
    """Base class for all toolkit errors."""


class InputError(ImmersionError, ValueError):
    """Base class for errors caused by the caller's input."""


class BoundaryStencil(ImmersionError):
    """A derivative was requested where the stencil leaves the grid."""


class GridMismatch(InputError):
    """Two fields that must share a grid do not."""


class NotPositiveDefinite(ImmersionError):
    """A matrix that must be positive-definite is not."""

    def __init__(self, message: str, eigenvalue: Optional[float] = None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class NotPositiveOperator(ImmersionError):
    """The curvature operator has an eigenvalue at or below the positivity tolerance."""

    def __init__(self, eigenvalue: float, tolerance: float):
        super().__init__(
            f"Curvature operator is not positive-definite: "
            f"min eigenvalue {eigenvalue:.6g} <= tolerance {tolerance:.3g}"
        )
        self.eigenvalue = eigenvalue
        self.tolerance = tolerance


class NotCurvatureLike(ImmersionError):
    """A 4-index tensor violates the algebraic curvature symmetries."""


class WeylObstruction(ImmersionError):
    """The Weyl part of the curvature-operator logarithm does not vanish."""

    def __init__(self, weyl_star_norm: float, tolerance: float):
        super().__init__(
            f"Gauss equation has no solution: Weyl* norm {weyl_star_norm:.6g} "
            f"exceeds tolerance {tolerance:.3g}"
        )
        self.weyl_star_norm = weyl_star_norm
        self.tolerance = tolerance


class InvalidSeed(InputError):
    """Initial conditions for the height integration violate |grad h|_g < 1."""


class FlatnessViolation(ImmersionError):
    """A metric expected to be flat has curvature above tolerance."""


class SingularCouplingMatrix(ImmersionError):
    """The k x k coupling matrix of a k-tuple candidate is not invertible."""


class EmptyLevelBand(ImmersionError):
    """No valid grid point lies on the requested level of h."""


class DegenerateGradient(ImmersionError):
    """|grad h| is too small for the level set to be a hypersurface."""


class SpecError(InputError):
    """Malformed metric spec document."""


class IoError(InputError):
    """A file could not be read or written."""


class SchemaError(InputError):
    """A samples file violates its schema."""


class UsageError(InputError):
    """Bad command-line usage: unknown flag, missing argument, bad value."""
