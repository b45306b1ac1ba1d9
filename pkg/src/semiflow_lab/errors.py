"""Exception hierarchy shared by all modules."""


class SemiflowLabError(Exception):
    """Base class for all errors raised by this package."""


class InvalidStateError(SemiflowLabError):
    """A state vector contains NaN/Inf or violates a structural invariant."""


class ShapeError(SemiflowLabError):
    """Operands live on incompatible grids or have mismatched dimensions."""


class DomainError(SemiflowLabError):
    """An argument lies outside the operation's domain (negative time,
    abscissa beyond the extended grid, ...)."""


class HorizonError(SemiflowLabError):
    """A shift-semigroup operation would consume more than the remaining
    extension margin."""


class ConfigError(SemiflowLabError):
    """Invalid configuration: bad ladder, too-coarse grid, malformed run
    config."""


class ConvergenceError(SemiflowLabError):
    """Fixed-point or Newton iteration failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CapabilityError(SemiflowLabError):
    """A required callback (e.g. a second derivative) is not available."""


class SingularityError(SemiflowLabError):
    """A linear system is too ill-conditioned to invert reliably."""

    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class RankError(SemiflowLabError):
    """A basis or Jacobian is numerically rank deficient."""


class DegenerateFieldError(SemiflowLabError):
    """A vector field vanishes where it must not."""


class OffManifoldError(SemiflowLabError):
    """Projection onto a chart failed; carries the last distance seen."""

    def __init__(self, message, distance=None):
        super().__init__(message)
        self.distance = distance


class EmbeddingError(SemiflowLabError):
    """Backward-flow embedding has no solution in the chart (expected near
    the boundary or when the restricted differential collapses)."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class BlowUpError(SemiflowLabError):
    """An integrated trajectory exceeded the blow-up guard."""
