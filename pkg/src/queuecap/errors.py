"""Exception types shared across the package."""


class QueuecapError(Exception):
    """Base class for all errors raised by this package."""


class NegativeMass(QueuecapError):
    """A probability vector contains an entry below the negativity tolerance."""


class NotNormalized(QueuecapError):
    """A probability vector's total mass deviates from 1 beyond tolerance."""


class BadParameter(QueuecapError):
    """An argument is outside its documented domain."""


class TruncationInsufficient(QueuecapError):
    """Adaptive support doubling hit its cap with boundary mass still too large."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NoConvergence(QueuecapError):
    """The iterative solver hit its iteration cap above the residual tolerance."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InstanceTooLarge(QueuecapError):
    """An exhaustive routine was asked for an instance beyond its size contract."""


class WindowTooSmall(QueuecapError):
    """The output window is too short to evaluate boundary-free residuals."""


class ZeroQ0(QueuecapError):
    """Triangular analysis requires a positive leading coefficient."""


class BadQ(QueuecapError):
    """The order-1 recursion closed form requires 0 < q < 1."""


class CausalityViolation(QueuecapError):
    """An arrival policy used feedback that had not yet been revealed."""


class TooFewSamples(QueuecapError):
    """The plug-in entropy estimator needs more samples."""


class ConfigError(QueuecapError):
    """A run configuration failed schema validation."""
