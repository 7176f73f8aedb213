class DomainError(ValueError):
    """A function was evaluated outside its domain (e.g. ln of a non-PD matrix)."""


class InvalidStateError(ValueError):
    """Inputs are inconsistent with the current mesh or violate model bounds."""


class InvalidConfigError(ValueError):
    """A configuration fails a hard assumption check."""


class SolverFailure(RuntimeError):
    """A linear solve broke down or exceeded its iteration budget."""

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history or []


class NonConvergence(SolverFailure):
    """Newton iteration failed (line search exhausted or iteration cap hit)."""
