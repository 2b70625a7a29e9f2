"""Exception hierarchy shared by every module of the package."""


class TorcoverError(Exception):
    """Base class for all errors raised by torcover."""


class ModeError(TorcoverError, ValueError):
    """A moving mode violates one of its invariants."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NotGenerating(ModeError):
    """The jump vectors do not generate the full integer lattice."""


class BadOrientation(ModeError):
    """A jump vector's first nonzero component is not positive."""


class BadWeights(ModeError):
    """Rates are nonpositive or do not sum to one."""


class ModeFileError(ModeError):
    """Malformed mode file."""


class StepBudgetExceeded(TorcoverError, RuntimeError):
    """A simulation hit its safety cap on the number of jumps."""


class NotAbsorbing(TorcoverError):
    """Some transient state cannot reach the absorbing set."""


class CapExceeded(TorcoverError):
    """A state space exceeds the configured size cap."""


class ToleranceUnreachable(TorcoverError):
    """A numerical routine ran out of budget before meeting its tolerance."""


class SolveFailed(TorcoverError):
    """An iterative linear solve did not reach the requested residual."""


class KNotInA(TorcoverError, ValueError):
    """The set K is not contained in the enclosing box A."""


class KEqualsA(TorcoverError, ValueError):
    """Degenerate relative equilibrium problem: K fills the whole box."""


class CapacityUnavailable(TorcoverError):
    """No equilibrium measure could be obtained for a window."""


class DegenerateScale(TorcoverError, ValueError):
    """Box radii collapse after rounding, or obstacle boxes overlap."""


class Disconnected(TorcoverError):
    """The torus minus the obstacles is not connected under the mode."""


class NoConvergence(TorcoverError):
    """An eigensolver failed to converge."""


class SeparationViolated(TorcoverError, ValueError):
    """Points of a target set are closer than the required separation."""


class SeparationTooSmall(TorcoverError, ValueError):
    """Boxes around distinct centres overlap."""


class PreconditionError(TorcoverError, ValueError):
    """An operation was called outside its domain."""


class ConfigInvalid(TorcoverError, ValueError):
    """An experiment configuration failed validation."""
