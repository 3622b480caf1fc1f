"""Exception types shared across the package."""


class OVVISError(Exception):
    """Base class for all package errors."""


class ShapeError(OVVISError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(OVVISError, ArithmeticError):
    """A computation produced NaN or infinite values."""


class ContractError(OVVISError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(OVVISError, ValueError):
    """Invalid configuration value."""


class GradCheckError(OVVISError, AssertionError):
    """Finite-difference and analytic gradients could not be compared."""


class FixtureMismatch(OVVISError, AssertionError):
    """A stored golden value was not reproduced."""
