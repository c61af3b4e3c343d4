"""Exception taxonomy for the solver library."""


class MspError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(MspError, ValueError):
    """Operands are not conformal (shape contract violated)."""


class DomainError(MspError, ValueError):
    """A parameter is outside its documented domain."""


class SingularMatrixError(MspError, RuntimeError):
    """A direct factorization met a pivot below the singularity guard."""


class NotPsdError(MspError, RuntimeError):
    """A quadratic form came out negative beyond the clamping threshold."""


class SketchRankCollapse(MspError, RuntimeError):
    """The sketched core matrix stayed unfactorable through jitter escalation.

    Re-seeding the sketch is the caller's remedy; the event has tiny
    probability under the default sizing.
    """


class SizeGuardError(MspError, RuntimeError):
    """A dense test-scale reference path was asked to exceed its size guard."""


class BreakdownError(MspError, RuntimeError):
    """A Krylov recurrence lost its ability to continue (singular tridiagonal)."""


class InconsistentEstimate(MspError, RuntimeError):
    """A stochastic estimate came out impossibly negative (broken factor)."""
