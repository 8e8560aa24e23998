"""Exception types raised across the package."""

__all__ = [
    "TwoScaleError",
    "ParameterError",
    "SingularityError",
    "SizeError",
    "DegenerateFieldError",
    "NumericalError",
    "QuadratureError",
    "MaskError",
    "ConfigError",
]


class TwoScaleError(Exception):
    """Base class for all package errors."""


class ParameterError(TwoScaleError, ValueError):
    """A model or estimator parameter is outside its admissible domain."""


class SingularityError(TwoScaleError, ValueError):
    """Evaluation at a point where the function is singular (e.g. a spectral pole)."""


class SizeError(TwoScaleError, ValueError):
    """Grid too small for the requested stencil, or above a configured cap."""


class DegenerateFieldError(TwoScaleError, ValueError):
    """Quadratic variations vanish, so the moment estimators are undefined."""


class NumericalError(TwoScaleError, ArithmeticError):
    """A factorization or numerical procedure failed (e.g. non-PSD covariance)."""


class QuadratureError(NumericalError):
    """Adaptive quadrature did not meet its tolerance."""


class MaskError(TwoScaleError, ValueError):
    """A frequency or site mask leaves nothing to work with."""


class ConfigError(TwoScaleError, ValueError):
    """Malformed experiment configuration."""
