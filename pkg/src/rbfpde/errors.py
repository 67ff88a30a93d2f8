"""Exception types shared across the package.

The CLI maps :class:`ValidationError` to exit code 2 and
:class:`NumericalError` (including :class:`SolverError`) to exit code 3.
"""


class ValidationError(ValueError):
    """Bad input: wrong shapes, inconsistent configuration, malformed files."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values or diverged."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class SolverError(NumericalError):
    """A linear solve failed (singular or numerically unusable system)."""
