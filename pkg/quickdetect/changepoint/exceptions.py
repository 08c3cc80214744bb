"""Error types shared by the change-point modules.

DomainError covers invalid parameters and violated preconditions,
NumericalError covers everything that goes wrong inside a computation.
The management commands map them to exit codes 2 and 3.
"""


class DomainError(ValueError):
    """A parameter or precondition is outside its valid domain."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class NumericalError(ArithmeticError):
    """A numerical procedure failed to produce a trustworthy result."""


class ConvergenceError(NumericalError):
    """An iteration did not converge or an operator is not contractive."""


class BracketError(NumericalError):
    """Root bracketing failed; ``bracket`` holds the last interval tried."""

    def __init__(self, message, bracket):
        self.bracket = tuple(bracket)
        super().__init__(f"{message} (last bracket [{bracket[0]:.6g}, {bracket[1]:.6g}])")


class ResonanceError(NumericalError):
    """The separable-kernel denominator vanishes."""
