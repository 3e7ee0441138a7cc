"""Exception and warning types raised across the package."""


class TriangulationError(Exception):
    """Base class for all package errors."""


class ParseError(TriangulationError, ValueError):
    """Malformed input file (ragged rows, non-numeric cells)."""


class ValidationError(TriangulationError, ValueError):
    """Input violates a documented contract."""


class UnknownColumnError(TriangulationError, KeyError):
    """A column name was requested that the dataset does not contain."""


class DomainError(TriangulationError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class NoValidModelError(TriangulationError):
    """No candidate model passed the validity filter."""


class DegenerateConditionalError(TriangulationError, ZeroDivisionError):
    """Conditioning on an event of probability zero."""


class BranchMismatchError(TriangulationError):
    """Requested inference branch is incompatible with the estimators used."""


class EstimationError(TriangulationError):
    """Numerical failure while fitting a model or solving an estimating equation.

    Bootstrap and subsampling replicates that raise a subclass of this are
    dropped and counted rather than aborting the run.
    """


class SingularDesignError(EstimationError):
    pass


class NonConvergenceError(EstimationError):
    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit
        self.converged = False


class RootNotBracketedError(EstimationError):
    pass


class DegenerateInformationError(EstimationError):
    pass


class WeakInstrumentError(EstimationError):
    pass


class UnstableBootstrapError(TriangulationError):
    """Too many resampling replicates failed."""


class ExperimentUnstableError(TriangulationError):
    """Too many simulation trials failed."""


class HighClipWarning(UserWarning):
    """More than 1% of fitted probabilities were clipped."""


class NumericalWarning(UserWarning):
    """A numerically impossible quantity was clamped (e.g. negative variance)."""
