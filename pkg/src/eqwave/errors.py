"""Exception hierarchy shared by the solvers and the command line."""


class EqwaveError(Exception):
    """Base class for all library errors."""


class ConfigError(EqwaveError, ValueError):
    """Invalid model or run configuration."""


class ModelEvaluationError(EqwaveError, ArithmeticError):
    """The right-hand side or a Jacobian produced non-finite values."""


class NoConvergenceError(EqwaveError):
    """Newton iteration failed; ``last`` holds the final iterate."""

    def __init__(self, message, last=None, residual=None):
        super().__init__(message)
        self.last = last
        self.residual = residual


class RankDeficiencyError(EqwaveError):
    """Newton Jacobian is numerically singular."""


class ContinuationStall(EqwaveError):
    """Step size fell below the minimum without a converged point."""


class ResolutionError(EqwaveError):
    """A discretization or sampling grid is too coarse for the request."""


class DegenerateSolutionError(EqwaveError):
    """A modulated-wave solve collapsed onto a continuous wave."""


class DomainError(EqwaveError, ValueError):
    """Argument outside the admissible range."""


class DerivativeUnavailableError(EqwaveError):
    """A finite-difference derivative could not be formed."""


class NoFeedbackError(EqwaveError):
    """The delayed coupling matrix vanishes identically."""


class DivergenceError(EqwaveError):
    """A simulated trajectory escaped to infinity."""

    def __init__(self, message, escape_time=None):
        super().__init__(message)
        self.escape_time = escape_time


class MarginalStabilityError(EqwaveError):
    """Spectral data lie within the tolerance band around zero."""
