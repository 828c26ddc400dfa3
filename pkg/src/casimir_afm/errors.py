"""Exception hierarchy shared by every stage of the toolkit."""


class CasimirAFMError(Exception):
    """Base class for all toolkit errors."""


class DomainError(CasimirAFMError, ValueError):
    """A physical formula was evaluated outside its domain (e.g. z <= 0)."""


class NumericalError(CasimirAFMError, ArithmeticError):
    """An iterative evaluation failed to converge."""


class DegenerateFitError(CasimirAFMError):
    """A least-squares problem has fewer distinct abscissae than parameters."""


class InsufficientDataError(CasimirAFMError):
    """Not enough samples to run a procedure."""


class CalibrationFailedError(CasimirAFMError):
    """A calibration fit did not converge. ``partial`` holds the last iterate."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NoContactError(CasimirAFMError):
    pass


class DriftEstimationError(CasimirAFMError):
    pass


class ConvergenceError(CasimirAFMError):
    """The k'/z0 alternation did not converge; ``trajectory`` lists the cycles."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory or []


class ValidationError(CasimirAFMError, ValueError):
    """Input data or configuration violates a documented invariant."""
