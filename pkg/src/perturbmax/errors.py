"""Exception types shared across the package.

The CLI maps these onto process exit codes: precondition failures exit
with 2, invariant violations with 3.
"""

from __future__ import annotations


class PerturbMaxError(Exception):
    """Base class for all package errors."""


class PreconditionError(PerturbMaxError, ValueError):
    """An operation was called outside its contract (bad sizes, caps, domains)."""


class EnumerationCapError(PreconditionError):
    """Configuration space too large for exhaustive enumeration."""

    def __init__(self, num_configs: int, cap: int):
        super().__init__(
            f"configuration space has {num_configs} states, "
            f"exceeding the enumeration cap of {cap}"
        )
        self.num_configs = num_configs
        self.cap = cap


class SolverRejection(PerturbMaxError, ValueError):
    """A solver refused an input it cannot handle exactly."""


class InvariantViolation(PerturbMaxError, RuntimeError):
    """A computed result failed one of its declared invariants."""
