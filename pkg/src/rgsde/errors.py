"""Exception hierarchy shared by all modules."""


class RGSDEError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(RGSDEError, ValueError):
    pass


class ConstraintViolationError(RGSDEError, ValueError):
    """An input lies outside its admissible set (e.g. volatility bounds)."""


class ResourceLimitError(RGSDEError):
    pass


class ObstacleViolationError(RGSDEError, ValueError):
    """Initial value below the obstacle, S_0 > x."""


class NonConvergenceError(RGSDEError):
    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)


class NumericFailureError(RGSDEError, FloatingPointError):
    pass


class UnsupportedModulusError(RGSDEError, ValueError):
    pass


class IllPosedCaseError(RGSDEError):
    """Comparison-theorem hypotheses failed a probe; the run would test nothing."""

    def __init__(self, message, probe=None):
        super().__init__(message)
        self.probe = probe


class ConfigError(RGSDEError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
