"""Exception hierarchy shared by the simulator modules."""


class NLCHError(Exception):
    """Base class for all simulator errors."""


class MeanNotZero(NLCHError, ValueError):
    """Raised when a mean-zero field was required but the mean is not zero."""


class GridMismatch(NLCHError, ValueError):
    pass


class KernelTooWide(NLCHError, ValueError):
    """Kernel support does not fit inside the minimal-image cell (eps >= L/2)."""


class SymbolNegativity(NLCHError, ArithmeticError):
    pass


class UnderResolved(NLCHError, ValueError):
    pass


class DomainViolation(NLCHError, ValueError):
    """Field values outside the effective domain of an unregularized potential."""


class ConvergenceFailure(NLCHError, ArithmeticError):
    pass


class StepDiverged(NLCHError, ArithmeticError):
    """Inner fixed-point iteration failed to converge within the iteration cap.

    ``history`` holds the relative L2 increments of every attempted iteration,
    ``step_index`` the step that failed.
    """

    def __init__(self, message, history=None, step_index=None):
        super().__init__(message)
        self.history = list(history or [])
        self.step_index = step_index


class ConfigError(NLCHError, ValueError):
    """Invalid run configuration. ``key`` is the dotted path of the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
