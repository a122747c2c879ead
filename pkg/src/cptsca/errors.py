"""Exception hierarchy shared by the solver modules."""


class CptScaError(Exception):
    """Base class for every error raised by this package."""


class InvalidParams(CptScaError, ValueError):
    """A CPT parameter set violates its invariants.

    ``field`` names the first offending parameter.
    """

    def __init__(self, field, message=None):
        self.field = field
        super().__init__(message or f"invalid CPT parameter '{field}'")


class UtilityOverflow(CptScaError, OverflowError):
    """An exponent argument exceeded the hard cap; clip or rescale the SNR."""


class KinkAt(CptScaError, ValueError):
    """A two-sided derivative was requested at the reference-point kink."""

    def __init__(self, x0):
        self.x0 = x0
        super().__init__(f"utility is not differentiable at the kink x0={x0!r}")


class ProbOutOfRange(CptScaError, ValueError):
    pass


class NoCaseApplies(CptScaError, ValueError):
    """The parameter signs match none of the six surrogate cases."""


class SlopeOrderViolation(CptScaError, ValueError):
    """The utility is not loss averse at x0 and no concave junction exists."""


class DimensionMismatch(CptScaError, ValueError):
    pass


class BadSpec(CptScaError, ValueError):
    pass


class InfeasibleStart(CptScaError, ValueError):
    pass


class InnerSolverFailure(CptScaError, RuntimeError):
    """The inner (dual) solver failed at outer iteration ``iteration``."""

    def __init__(self, iteration, cause):
        self.iteration = iteration
        self.cause = cause
        super().__init__(f"inner solver failed at SCA iteration {iteration}: {cause}")


class Diverged(CptScaError, RuntimeError):
    """Primal iterates left the configured norm cap (non-concave surrogate?)."""


class BudgetExhausted(CptScaError, RuntimeError):
    """Dual iteration budget ran out; ``result`` holds the best pair so far."""

    def __init__(self, result):
        self.result = result
        super().__init__(
            f"dual ascent hit its iteration budget (g={result.g:.3e}, k={result.k:.6g})"
        )


class TooManyAgents(CptScaError, ValueError):
    pass


class WrongDimension(CptScaError, ValueError):
    pass


class ConfigError(CptScaError, ValueError):
    """A run configuration is missing, unreadable, or has unknown/invalid keys."""
