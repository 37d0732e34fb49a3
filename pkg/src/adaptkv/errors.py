"""Exception types shared across the package."""


class AdaptKVError(Exception):
    """Base class for all package errors."""


class DimensionError(AdaptKVError, ValueError):
    """Operand shapes do not line up."""


class DegenerateBasisError(AdaptKVError, ArithmeticError):
    """QR met a (numerically) rank-deficient input."""


class NumericalFailure(AdaptKVError, ArithmeticError):
    """Non-finite values or a kernel that failed to converge."""


class ConfigError(AdaptKVError, ValueError):
    """Invalid scenario configuration."""
