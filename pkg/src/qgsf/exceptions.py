"""Exception types shared across the package."""


class ContractError(ValueError):
    """A documented precondition or invariant was violated by the caller."""


class FactorizationError(ContractError):
    """A covariance matrix that must be SPD failed its Cholesky factorization."""


class ModelFileError(ValueError):
    """A persisted model file is malformed or violates its schema invariants."""


class ConfigError(ValueError):
    """An experiment configuration file is invalid."""


class UnsupportedConfigError(ValueError):
    """The requested operation does not support this model configuration."""


class DegenerateUpdateError(RuntimeError):
    """Every mixture weight underflowed during a correction step."""


class DegenerateWeightsError(RuntimeError):
    """All particle log-weights are -inf (no particle explains the measurement)."""


class GridTooSmallError(RuntimeError):
    """Probability mass reached the edge of the point-mass grid."""
