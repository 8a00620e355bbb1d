"""Shared exception types."""


class ValidationError(ValueError):
    """An input violates a documented precondition or field invariant."""


class SingularityError(ValueError):
    """A geometric configuration makes the requested computation singular."""
