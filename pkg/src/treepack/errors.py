"""Exception hierarchy shared by every treepack module.

Each failure class maps to a distinct CLI exit code (see cli.py), so the
pipeline distinguishes bad input from legitimate desk-scale infeasibility.
"""


class TreepackError(Exception):
    """Base class for all treepack errors."""


class InputError(TreepackError):
    """Malformed or out-of-range input."""


class ConfigError(TreepackError):
    """Parameter configuration violates a validated constraint."""


class ClassificationError(TreepackError):
    """No case in {L, S, P} certifies at the configured thresholds.

    Carries the three measured quantities so callers can report them.
    """

    def __init__(self, msg, measured=None):
        super().__init__(msg)
        self.measured = measured or {}


class PartitionError(TreepackError):
    """Tree partition could not select a feasible P_ex (deficit report attached)."""

    def __init__(self, msg, deficit=None):
        super().__init__(msg)
        self.deficit = deficit or {}


class InfeasibleMatchingError(TreepackError):
    """No perfect matching exists; carries a Hall-violator witness."""

    def __init__(self, msg, hall_violator=None):
        super().__init__(msg)
        self.hall_violator = hall_violator


class StuckError(TreepackError):
    """A randomized repair loop exhausted its move budget."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class PipelineAbort(TreepackError):
    """Structured abort from an embedding stage.

    The algorithm aborts whenever it cannot make a required choice; the
    stage and reason identify where, so aborts are classifiable.
    """

    def __init__(self, stage, reason, details=None):
        super().__init__(f"abort at {stage}: {reason}")
        self.stage = stage
        self.reason = reason
        self.details = details or {}


class BudgetExceeded(TreepackError):
    """Search refused or cut off: instance exceeds the configured cap."""
