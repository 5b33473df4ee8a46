"""Exception hierarchy shared by all modules."""


class AdakrigError(Exception):
    """Base class for package errors."""


class ArgumentError(AdakrigError, ValueError):
    """Invalid argument shape or value."""


class DegenerateDesignError(AdakrigError):
    """Coincident or otherwise unusable design points."""


class SingularTrendError(AdakrigError):
    """Trend matrix F_N is not of full column rank."""


class FitError(AdakrigError):
    """Kernel hyperparameter estimation failed at every start."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class NumericalError(AdakrigError):
    """A factorization failed even after jitter escalation."""


class UndefinedQ2Error(AdakrigError):
    """Q2 undefined because the observations have zero spread."""


class DomainError(AdakrigError, ValueError):
    """A point lies outside the input domain."""


class DegenerateDomainError(AdakrigError):
    """Truncated sampling has vanishing acceptance on the domain."""


class DegenerateSampleError(AdakrigError):
    """Nearest-neighbour distances vanish even after tie jitter."""


class DegenerateDiagnosticError(AdakrigError):
    """Convergence diagnostic undefined (zero within-chain variance)."""


class DegenerateWeightError(AdakrigError):
    """All importance weights vanished."""


class ElicitationError(AdakrigError):
    """Prior hyperparameters lack the elicitation surface C_e."""


class BudgetError(AdakrigError):
    """The forward-model evaluation budget is exhausted."""


class ConfigError(AdakrigError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
