"""Exception types shared across the toolkit."""


class SpecestError(Exception):
    """Base class for toolkit-specific failures."""


class NotHPDError(SpecestError, ValueError):
    """A matrix that must be Hermitian positive definite is not."""


class AdmissibilityError(SpecestError, ValueError):
    """A Lagrange multiplier left the admissible open set.

    Carries the offending grid node index and the violating eigenvalue.
    """

    def __init__(self, message, node=None, eigenvalue=None):
        super().__init__(message)
        self.node = node
        self.eigenvalue = eigenvalue


class FeasibilityError(SpecestError, ValueError):
    """A state covariance is incompatible with the moment constraint set."""


class ConvergenceError(SpecestError, RuntimeError):
    """An iterative solver did not converge; ``report`` holds the last iterate."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
