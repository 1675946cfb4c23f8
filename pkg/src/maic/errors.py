"""Exception hierarchy shared across the package."""


class MaicError(Exception):
    """Base class for all errors raised by this package."""


# --- data ingestion ---------------------------------------------------------

class MissingColumn(MaicError):
    pass


class NonNumericValue(MaicError):
    pass


class InvalidArmCode(MaicError):
    pass


class EmptyStudy(MaicError):
    pass


class SchemaError(MaicError):
    pass


class NegativeVariance(MaicError):
    pass


class DimensionMismatch(MaicError):
    pass


class MissingVariance(MaicError):
    pass


# --- weighting --------------------------------------------------------------

class NonConvergence(MaicError):
    """Weight solver failed; usually the target lies outside the convex hull
    of the IPD moments (a positivity/overlap failure)."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateCovariate(MaicError):
    pass


class EmptyWeights(MaicError):
    pass


# --- estimation -------------------------------------------------------------

class BoundaryProportion(MaicError):
    pass


class NoActiveArm(MaicError):
    pass


class NoComparatorArm(MaicError):
    pass


class SeparationError(MaicError):
    pass


class SingularDesign(MaicError):
    pass


# --- variance ---------------------------------------------------------------

class SingularJacobian(MaicError):
    pass


class MissingAgdVariance(MaicError):
    pass


class RequiresFullIpd(MaicError):
    pass


# --- inference --------------------------------------------------------------

class InvalidLevel(MaicError):
    pass


class ZeroSe(MaicError):
    pass


# --- simulation -------------------------------------------------------------

class InsufficientCell(MaicError):
    pass
