"""Exception hierarchy shared by every solver in the package."""


class PrecodingError(Exception):
    """Base class for all errors raised by :mod:`twrelay`."""


class DimensionError(PrecodingError, ValueError):
    """Operands have incompatible or unsupported shapes."""


class IllConditionedError(PrecodingError, ValueError):
    """Input violates a rank condition required by a decomposition."""


class DefinitenessError(PrecodingError, ValueError):
    """A matrix expected to be Hermitian positive (semi)definite is not."""


class DecompositionError(PrecodingError, ArithmeticError):
    """A dense factorization failed to converge."""


class ConfigurationError(PrecodingError, ValueError):
    """An antenna/power configuration is outside a solver's scope."""


class ConstraintError(PrecodingError, ValueError):
    """A power allocation or precoder violates its power budget."""


class InfeasibleBudgetError(PrecodingError, ValueError):
    """The relay budget is exhausted before any source power is spent."""


class SolverError(PrecodingError, RuntimeError):
    """An iterative solver failed to converge.

    Parameters
    ----------
    message : str
        Human readable description.
    residual : float, optional
        Last residual seen by the solver, for diagnostics.
    iteration : int, optional
        Outer iteration at which the failure occurred, when known.
    """

    def __init__(self, message, residual=None, iteration=None):
        super().__init__(message)
        self.residual = residual
        self.iteration = iteration
