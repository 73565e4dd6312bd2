"""Exception types shared across the package.

The CLI maps these onto exit codes: validation problems exit with 2,
budget problems with 3, anything else with 4.
"""


class ValidationError(ValueError):
    """A precondition on an operation's inputs is violated."""


class ConfigurationError(ValidationError):
    """Inputs are individually valid but jointly unusable (resolution,
    regime or checkpoint misconfiguration)."""


class DiagonalError(ValidationError):
    """A point tuple sits on the diagonal where a density diverges."""


class UnsupportedOrderError(ValidationError):
    """Moment order outside the implemented range."""


class StateError(RuntimeError):
    """Operation needs simulation state (e.g. a checkpoint) that was not
    recorded."""


class BudgetError(RuntimeError):
    """A Monte Carlo run produced too few events to report an estimate."""

    def __init__(self, message: str, suggested_reps: int | None = None):
        super().__init__(message)
        self.suggested_reps = suggested_reps
