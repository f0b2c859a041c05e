"""Exception hierarchy for grassrom."""


class GrassromError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(GrassromError, ValueError):
    """Array shapes or requested dimensions are inconsistent."""


class RankDeficiencyError(GrassromError, ArithmeticError):
    """A factorization met a (numerically) rank-deficient matrix."""


class ContractError(GrassromError, ValueError):
    """An input violates a documented precondition (e.g. symmetry)."""


class DataContractError(GrassromError, ValueError):
    """A dataset lacks data required by the requested operation."""


class GradientDataRequired(DataContractError):
    """Jacobian samples are needed but the dataset carries none."""


class DegenerateSpectrumError(GrassromError, ArithmeticError):
    """All gradient samples vanish, so no active subspace exists."""


class IntegrationError(GrassromError, RuntimeError):
    """The ODE integrator failed (step size underflow)."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class NumericalError(GrassromError, FloatingPointError):
    """Training produced a non-finite value.

    ``trace`` holds the partial training trace recorded so far.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
