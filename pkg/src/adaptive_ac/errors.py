"""Exception types raised by the library."""


class AdaptiveACError(Exception):
    """Base class for all library errors."""


class NonErgodicChain(AdaptiveACError):
    """The induced chain does not have a unique stationary distribution."""


class SingularSystem(AdaptiveACError):
    """The anchored Poisson system for the differential value is ill-conditioned."""


class DimensionMismatch(AdaptiveACError, ValueError):
    pass


class RankDeficientBasis(AdaptiveACError):
    """Basis columns are (numerically) linearly dependent."""

    def __init__(self, message, singular_values=None):
        super().__init__(message)
        self.singular_values = singular_values


class IdentityMismatch(AdaptiveACError):
    """Two formulas for the same quantity disagree; indicates a bug."""


class InvalidState(AdaptiveACError, ValueError):
    pass


class WidthUnderflow(AdaptiveACError, ValueError):
    pass


class InvalidAction(AdaptiveACError, ValueError):
    pass


class NonFiniteUpdate(AdaptiveACError, FloatingPointError):
    """An iterate left the finite range."""

    def __init__(self, message, component=None, step=None):
        super().__init__(message)
        self.component = component
        self.step = step


class ColdEstimatorBank(AdaptiveACError):
    """ABPBE step requested before the estimator bank finished burn-in."""


class SingularA(AdaptiveACError):
    """The TD matrix A is singular and the fixed-point system is inconsistent."""


class ConfigError(AdaptiveACError, ValueError):
    pass
