"""Exception types shared across the package."""


class AcoeLabError(Exception):
    """Base class for all package errors."""


class InvalidInstanceError(AcoeLabError, ValueError):
    """An instance or argument violates a model invariant.

    ``invariant`` names the violated condition so callers (and the CLI) can
    report it verbatim.
    """

    def __init__(self, invariant, detail=""):
        self.invariant = invariant
        self.detail = detail
        msg = f"invariant violated: {invariant}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ConfigurationError(AcoeLabError, ValueError):
    """The DP model is malformed, e.g. a state with no admissible action."""


class TruncationUnderflowError(AcoeLabError):
    """Demand mass leaves the lattice from below and no linear tail is known."""


class TruncationTooTightError(AcoeLabError):
    """A minimizer sits on the lattice boundary, so truncation distorted it."""


class BoundingBoxError(AcoeLabError):
    """The supplied [x_L, x_U] box does not contain all discounted minimizers."""


class NonConvergenceError(AcoeLabError):
    """An iterative solver hit its iteration cap, or stalled above its tolerance."""

    def __init__(self, residual, iterations, what="value iteration"):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"{what} did not converge in {iterations} iterations "
            f"(last residual {residual:.3e})"
        )
