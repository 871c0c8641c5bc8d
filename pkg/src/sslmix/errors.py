"""Exception hierarchy for sslmix.

Every error raised deliberately by this package derives from
:class:`SslmixError`, so callers (and the CLI) can catch one type.
"""


class SslmixError(Exception):
    """Base class for all sslmix errors."""


class DimensionError(SslmixError):
    """An input's shape does not match the model dimension."""


class ContractError(SslmixError):
    """A precondition on the input data was violated."""


class EmptyClassError(SslmixError):
    """A class has no (or too few) observations where some are required."""


class UnsupportedError(SslmixError):
    """The request is outside the supported model family."""


class SingularityError(SslmixError):
    """A covariance estimate is singular even after ridge regularization."""


class QuadratureError(SslmixError):
    """Adaptive quadrature failed to converge to the requested tolerance."""


class DomainError(SslmixError):
    """A derived quantity left its mathematically valid domain."""


class CellError(SslmixError):
    """No usable replications remain in a simulation cell."""


class FoldError(SslmixError):
    """Cross-validation folds could not be built with all classes present."""


class CurveError(SslmixError):
    """A diagnostic curve cannot be computed (degenerate covariate range)."""


class RankError(SslmixError):
    """Requested projection dimension exceeds the rank of the data."""
