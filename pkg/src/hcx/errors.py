"""Exception hierarchy for the hcx package."""


class HcxError(Exception):
    """Base class for all package errors."""


class NonZeroMean(HcxError):
    """A zero-mean field was required but the mean is above tolerance."""


class PoleAtPoint(HcxError):
    """Series expansion requested at a point where the denominator vanishes identically."""


class NonGeneric(HcxError):
    """A genericity assumption (monomial basis, transversality determinant) fails."""


class NonGenericConjugate(NonGeneric):
    """Conjugation requested at a point where mu_2 is not invertible."""


class NotCyclic(HcxError):
    """The matrix pair admits no cyclic vector."""


class NotPolynomialInA(HcxError):
    """B cannot be written as a polynomial in A; the linear solve is inconsistent."""


class ShapeMismatch(HcxError):
    """Operands have incompatible scalar/matrix shapes."""


class SingularGauge(HcxError):
    """The gauge matrix is not invertible at some point."""


class NotPrincipalNilpotent(HcxError):
    """The field is not principal nilpotent at a sample point."""


class NotPositiveDefinite(HcxError):
    """A hermitian metric fails positive definiteness."""


class NoHiggsGauge(HcxError):
    """Higgs gauge requested for a non-trivial structure (mu != 0)."""


class NoConvergence(HcxError):
    """Newton iteration failed to reach the requested tolerance."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class TorusObstruction(HcxError):
    """The integrated equation admits no periodic solution (positive right-hand side)."""


class DegreeMismatch(HcxError):
    """A Laurent expansion has nonzero coefficients above the expected degree."""


class WidthExceeded(HcxError):
    """A loop-algebra element exceeds the admissible band width."""


class ConfigError(HcxError):
    """A job configuration failed validation."""
