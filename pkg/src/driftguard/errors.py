"""Shared exception types.

Kept deliberately small: callers mostly care about the difference between
"you gave me bad data" (InvalidInputError), "you called me at the wrong
time" (InvalidStateError) and "the operator answer does not fit the
pending request" (InvalidFeedbackError, mapped to HTTP 422 by the
service).
"""


class DriftguardError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(DriftguardError, ValueError):
    """Malformed or out-of-contract arguments."""


class InvalidStateError(DriftguardError, RuntimeError):
    """Operation not valid in the current lifecycle state."""


class InvalidFeedbackError(DriftguardError, ValueError):
    """Operator feedback that does not match the pending proposal."""
