"""Exception types shared across the package.

The CLI maps :class:`InputError` subclasses to exit code 2 and
:class:`SolveError` subclasses to exit code 1.
"""


class GridAttackError(Exception):
    """Base class for all package errors."""


class InputError(GridAttackError, ValueError):
    """Malformed or inconsistent user input."""


class CaseParseError(InputError):
    pass


class CaseValidationError(InputError):
    pass


class ConnectivityError(CaseValidationError):
    """The closed-branch graph does not span every bus."""

    def __init__(self, message, isolated=()):
        super().__init__(message)
        self.isolated = tuple(isolated)


class LayoutMismatchError(InputError):
    pass


class FittingError(InputError):
    """Autoregressive fit impossible (e.g. constant history)."""


class SolveError(GridAttackError):
    pass


class SingularSystemError(SolveError):
    """Normal matrix (or power-flow matrix) is singular."""


class InfeasibleAttackError(SolveError):
    """Some per-measurement feasibility interval is empty.

    ``indices`` holds the offending measurements, 1-based.
    """

    def __init__(self, message, indices):
        super().__init__(message)
        self.indices = tuple(int(i) for i in indices)


class ConvergenceError(SolveError):
    def __init__(self, message, best, grad_norm):
        super().__init__(message)
        self.best = best
        self.grad_norm = grad_norm
