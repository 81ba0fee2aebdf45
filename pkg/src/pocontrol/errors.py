"""Exception types shared across the package."""


class PocontrolError(Exception):
    """Base class for all package errors."""


class ConfigError(PocontrolError, ValueError):
    """Malformed or inconsistent configuration input."""


class ValidationError(PocontrolError):
    """Model fails the nonnegativity or invertibility conditions of the LQ problem."""


class GammaSingular(PocontrolError, ArithmeticError):
    """The action Hessian Gamma is not safely invertible."""


class NonFinite(PocontrolError, FloatingPointError):
    """A simulated or integrated quantity overflowed or became NaN."""
