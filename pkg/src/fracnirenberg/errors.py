"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ResolutionError(ValueError):
    """The requested accuracy or band limit exceeds what the grid supports."""


class ShapeError(ValueError):
    """Incompatible array layouts, grid kinds or missing levels."""


class SingularityError(ValueError):
    """Evaluation requested at a point where the field is singular."""


class SolverFailure(RuntimeError):
    """Newton (or linear) iteration did not converge.

    ``history`` carries the residual norms seen so far.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class PositivityLoss(SolverFailure):
    """Damping could not keep the iterate positive."""


class FDSolveError(SolverFailure):
    """The discrete weighted operator stopped being positive definite."""

    def __init__(self, message, a_norm=None, history=None):
        super().__init__(message, history)
        self.a_norm = a_norm
