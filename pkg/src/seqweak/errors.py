"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An input broke a documented precondition (shape, hermiticity, range)."""


class OutcomeUnderflow(ArithmeticError):
    """The Kraus weight of an outcome fell below the representable floor."""


class DegeneratePostselection(ArithmeticError):
    """Post-selection acceptance is too small to condition on."""


class UndefinedWeakValue(ArithmeticError):
    """Pre- and post-selected states are orthogonal."""


class TruncationError(ValueError):
    """A Fock-truncated state reaches the edge of the truncated space."""


class EstimatorUnavailable(RuntimeError):
    """A Monte Carlo pool holds too few samples for an estimate."""
