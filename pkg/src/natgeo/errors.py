"""Exception hierarchy shared by every module."""


class NatGeoError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(NatGeoError, ValueError):
    """A parameter lies outside the valid domain of a model or function."""


class DomainExit(DomainError):
    """A trajectory (geodesic, optimizer step) left the valid parameter domain."""


class SingularMetric(NatGeoError, ArithmeticError):
    """The metric could not be factorized (not SPD or numerically singular)."""


class NonFiniteState(NatGeoError, ArithmeticError):
    """An integrator produced NaN or Inf."""


class Breakdown(NatGeoError, ArithmeticError):
    """Conjugate gradient met a non-positive curvature denominator."""


class ShapeMismatch(NatGeoError, ValueError):
    pass


class LengthMismatch(NatGeoError, ValueError):
    pass


class NumericalUnderflow(NatGeoError, ArithmeticError):
    """Too many network outputs were clamped away from the poles of the loss."""


class ConfigError(NatGeoError, ValueError):
    """Invalid experiment configuration. ``key`` names the offending field."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
