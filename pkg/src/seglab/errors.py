from __future__ import annotations


class SolverError(RuntimeError):
    """A linear or nonlinear solve failed."""


class ConvergenceError(SolverError):
    """Iteration cap reached before the tolerance was met.

    ``residual`` is the last measured residual or update size; ``stage`` the
    penalty parameter of the continuation stage that failed, if any.
    """

    def __init__(self, message: str, residual: float | None = None, stage: float | None = None):
        super().__init__(message)
        self.residual = residual
        self.stage = stage
