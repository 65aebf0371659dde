"""Exception types shared across the package."""


class ValleyFillError(Exception):
    """Base class for all package errors."""


class StructuralError(ValleyFillError, ValueError):
    """Feeder topology is not a tree rooted at node 0."""


class DomainError(ValleyFillError, ValueError):
    """An argument lies outside the domain of an operation."""


class InfeasibleScenarioError(ValleyFillError, ValueError):
    """A vehicle cannot reach its desired state of charge inside the window."""


class BaselineViolationError(ValleyFillError, ValueError):
    """Baseline load alone already breaks the lower voltage bound."""


class NumericError(ValleyFillError, ArithmeticError):
    """An iterative method diverged, produced non-finite values or ran out of budget.

    Attributes
    ----------
    residual : float or None
        Last residual seen before giving up.
    iteration : int or None
        Iteration index at which the failure was detected.
    """

    def __init__(self, message, residual=None, iteration=None):
        super().__init__(message)
        self.residual = residual
        self.iteration = iteration
