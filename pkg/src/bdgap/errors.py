"""Exception types raised by the bdgap routines."""


class BDError(Exception):
    """Base class for every error raised by this package."""


class DomainError(BDError, ValueError):
    """An argument lies outside the region where the quantity is defined."""


class BudgetError(BDError, RuntimeError):
    """A series or search could not be certified within its term budget.

    ``partial`` carries the best value reached before giving up.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class EstimationError(BDError, RuntimeError):
    """A limit estimated from a finite window failed to settle.

    ``observed`` is the (min, max) range seen over the probe window.
    """

    def __init__(self, message, observed=None):
        super().__init__(message)
        self.observed = observed


class IndeterminateError(BudgetError):
    """A series neither converged nor certifiably diverged."""


class SupercriticalError(DomainError):
    """Requested mass exceeds the critical mass of the model."""


class SolverError(BDError, RuntimeError):
    """An eigenvalue or ODE solve failed; ``residual`` records how badly."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class StiffnessError(SolverError):
    """The adaptive step size collapsed below its floor."""


class PositivityError(SolverError):
    """A concentration went negative beyond the absolute tolerance."""


class ConfigError(BDError, ValueError):
    """A scenario or model document failed validation."""


class InsufficientDataError(BDError, ValueError):
    """Too few usable rows to fit a decay rate."""


class MomentOverflowError(BDError, OverflowError):
    """An exponential moment overflows at the truncation edge."""
