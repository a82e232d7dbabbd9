"""Exception hierarchy shared by all mlelab modules."""


class MleLabError(Exception):
    """Base class for every error raised by mlelab."""


class DomainError(MleLabError, ValueError):
    """An argument lies outside the support, parameter space or allowed range."""


class QuadratureFailure(MleLabError, ArithmeticError):
    """Numerical integration did not meet its tolerance within the subdivision budget."""


class NonPositiveInformation(MleLabError, ArithmeticError):
    pass


class NonConvergence(MleLabError, ArithmeticError):
    """The likelihood solver ran out of iterations before reaching the score tolerance."""


class NonFinite(MleLabError, ArithmeticError):
    pass


class NoClosedForm(MleLabError, LookupError):
    pass


class InsufficientGrid(MleLabError, ValueError):
    pass


class DegenerateFit(MleLabError, ValueError):
    pass


class RangeError(MleLabError, ValueError):
    """A z value falls outside the admissible zone (0, omega*sqrt(n)]."""


class NotFound(MleLabError, LookupError):
    """A randomized search exhausted its budget."""


class ConfigError(MleLabError, ValueError):
    pass


class PropagatedSolverFailure(MleLabError, RuntimeError):
    """Too many Monte Carlo replicates failed inside the MLE solver."""
