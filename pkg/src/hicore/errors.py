"""Exception hierarchy shared by all hicore modules."""


class HicoreError(Exception):
    """Base class for all errors raised by this package."""


# -- gridworld ---------------------------------------------------------------

class InfeasibleLayout(HicoreError):
    """Object placement constraints could not be satisfied after bounded retries."""


class EpisodeFinished(HicoreError):
    """step() was called on an environment whose episode already ended."""


# -- goals / planner ---------------------------------------------------------

class UnknownVerifier(HicoreError):
    """A goal names a verifier that is not in the catalog."""


class BadArity(HicoreError):
    """A verifier call carries the wrong number or kind of arguments."""


class EmptyWindow(HicoreError):
    """Achievement statistics requested before any episode completed."""


class MalformedPlan(HicoreError):
    """Planner output has no plan block or violates the plan schema."""


class EmptyPlan(HicoreError):
    """Plan block parsed but contains zero goals."""


class RewardBudgetExceeded(HicoreError):
    """Sum of intrinsic goal rewards exceeds the unit budget."""


class PlanningFailed(HicoreError):
    """No valid plan obtained within the parse-retry budget."""


class TransportError(HicoreError):
    """LLM endpoint unreachable after bounded retries."""


class UnrecognizedDescription(HicoreError):
    """Scripted planner could not parse an environment description."""


# -- learner -----------------------------------------------------------------

class ShapeMismatch(HicoreError):
    """Parameter or observation shapes are inconsistent."""


class NonFiniteLoss(HicoreError):
    """Training loss became NaN or infinite."""


class NoFreeCapacity(HicoreError):
    """PackNet pruning found no unclaimed weights left to allocate."""


# -- library -----------------------------------------------------------------

class DuplicateRecord(HicoreError):
    """Record with the same (description, plan) pair is already stored; no-op."""


class CorruptRecord(HicoreError):
    """A persisted library line could not be decoded."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"corrupt record at line {line_no}: {reason}")
        self.line_no = line_no


class IoFailure(HicoreError):
    """Filesystem read or write failed."""


# -- metrics -----------------------------------------------------------------

class NonMonotonicStep(HicoreError):
    """Checkpoint recorded at a step not after the previous one."""


class InsufficientPoints(HicoreError):
    """A curve phase holds fewer than two checkpoints."""


class EmptyMatrix(HicoreError):
    """Metric requested on a performance matrix with no checkpoints."""


class MisalignedCurves(HicoreError):
    """Reference curves do not share the evaluated run's checkpoint grid."""


# -- harness -----------------------------------------------------------------

class MissingField(HicoreError):
    """Required configuration field absent."""

    def __init__(self, field: str):
        super().__init__(f"missing config field: {field}")
        self.field = field


class InvalidValue(HicoreError):
    """Configuration field present but invalid."""
