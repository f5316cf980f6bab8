"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input data violates a structural invariant (bad file, unknown id, ...)."""


class RemoteError(RuntimeError):
    """A remote endpoint failed or answered with something unusable."""
