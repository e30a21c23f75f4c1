"""Exception hierarchy shared across the package."""
from __future__ import annotations


class StabkitError(Exception):
    """Base class for all package errors."""


class GeometryError(StabkitError, ValueError):
    pass


class DegenerateError(GeometryError):
    """A projective denominator or (3,3) entry vanished, or a fit was rank-deficient."""


class SingularError(GeometryError):
    pass


class InsufficientDataError(StabkitError, ValueError):
    """Too few points, matches or frames for the requested operation."""


class NoConsensusError(StabkitError):
    pass


class DimensionError(StabkitError, ValueError):
    pass


class EmptyRegionError(StabkitError, ValueError):
    pass


class CheckpointError(StabkitError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError, ValueError):
    pass


class NumericError(StabkitError, ArithmeticError):
    """A loss or gradient became non-finite."""
