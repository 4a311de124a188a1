"""Exception types shared across the package."""


class InvalidTermError(ValueError):
    """A model term references an unknown factor or an out-of-range degree."""


class MalformedDesignError(ValueError):
    """A design violates structural invariants (duplicate runs, bad levels, ...)."""


class SingularDesignError(RuntimeError):
    """The information matrix is rank deficient; the criterion is undefined."""


class CapacityError(ValueError):
    """A brute-force oracle guard (N or n too large) was exceeded."""

    def __init__(self, message, limit):
        super().__init__(message)
        self.limit = limit


class InfeasibleDesignError(ValueError):
    """No valid design exists (or could be sampled) for the requested shape."""


class InvalidScaleError(ValueError):
    """Rescaling constants must be strictly positive."""


class UpdateDegenerateError(RuntimeError):
    """A rank-update core matrix is numerically singular; recompute from scratch."""


class ConfigError(ValueError):
    """A run configuration failed validation; ``key`` names the offending field."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
