"""Exception types shared across the package."""


class TruncDPError(Exception):
    """Base class for package errors."""


class ConfigError(TruncDPError):
    """Invalid or inconsistent configuration values."""


class OverBudgetError(TruncDPError):
    """A ledger charge would exceed the declared privacy budget."""


class RejectionCapExceeded(TruncDPError):
    """Rejection sampling hit its draw cap without enough acceptances.

    Raised instead of silently returning fewer samples; callers treat it
    as evidence that the survival set carries far less mass than declared.
    """

    def __init__(self, attempts: int, cap: int, accepted: int = 0, needed: int = 1):
        self.attempts = attempts
        self.cap = cap
        self.accepted = accepted
        self.needed = needed
        super().__init__(
            f"rejection sampler used {attempts} draws (cap {cap}) "
            f"but accepted {accepted} of {needed} required samples"
        )


class ConditioningError(TruncDPError):
    """A matrix that must be positive definite (or well conditioned) is not."""


class InsufficientDataError(TruncDPError):
    """Fewer raw samples supplied than the planner requires."""
