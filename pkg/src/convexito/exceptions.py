"""Exception hierarchy shared by all modules."""


class ConvexitoError(Exception):
    pass


class InvalidInputError(ConvexitoError, ValueError):
    """Shape, dimension or grid mismatch in the arguments."""


class ConvexityViolationError(ConvexitoError):
    """Difference quotients failed the monotonicity a convex function guarantees."""

    def __init__(self, message, quotients=None):
        super().__init__(message)
        self.quotients = quotients


class SmoothingError(ConvexitoError):
    """The inner Moreau minimization did not reach its residual tolerance."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class LimitFailureError(ConvexitoError):
    """A subgradient sequence along a ray failed to settle."""

    def __init__(self, message, oscillation):
        super().__init__(message)
        self.oscillation = oscillation


class UnsupportedDimensionError(ConvexitoError, ValueError):
    pass


class InsufficientDataError(ConvexitoError):
    pass


class ConfigError(ConvexitoError):
    """Invalid experiment configuration; ``violations`` lists every problem found."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
