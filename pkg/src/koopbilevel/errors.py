"""Exception taxonomy shared across the package."""


class KoopbilevelError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(KoopbilevelError):
    """Invalid configuration (bad schema, unknown keys, degenerate bounds)."""


class DomainEvaluationError(KoopbilevelError):
    """A system map returned non-finite values for an in-domain state."""


class IntegrationError(KoopbilevelError):
    """An integrator stage produced non-finite values."""


class HybridEventError(KoopbilevelError):
    """A reset map was applied away from its guard surface."""


class DataError(KoopbilevelError):
    """Training data assembly failed (non-finite lift or Lie derivative)."""


class NumericError(KoopbilevelError):
    """A dense kernel received non-finite input."""


class DegenerateQpError(KoopbilevelError):
    """The KKT system stayed singular after regularization.

    Carries the smallest pivot magnitude seen during factorization.
    """

    def __init__(self, message, min_pivot=None):
        super().__init__(message)
        self.min_pivot = min_pivot


class CorrelationError(KoopbilevelError):
    """Pearson correlation is undefined (zero variance input)."""


class BuildError(KoopbilevelError):
    """Problem assembly failed (dimension mismatch)."""


class LowerLevelError(KoopbilevelError):
    """The convex lower level could not be solved for the given boundary data."""


class NoSolutionError(KoopbilevelError):
    """Every multistart branch of the upper level failed."""


class NonConvergenceError(KoopbilevelError):
    """An iterative solver exhausted its budget above tolerance.

    The best iterate found so far is attached for diagnosis and warm restarts.
    """

    def __init__(self, message, best=None, history=None):
        super().__init__(message)
        self.best = best
        self.history = history
