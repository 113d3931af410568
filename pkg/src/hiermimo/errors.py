"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, I/O errors -> 2,
InconsistencyError -> 3.
"""


class ConfigError(ValueError):
    """Invalid network/quality/experiment parameters."""


class PowerViolationError(RuntimeError):
    """A precoder violates a per-TX power budget it was supposed to satisfy.

    Signals an upstream normalization bug, not a user mistake.
    """


class InconsistencyError(RuntimeError):
    """An internal invariant that should hold by construction was violated."""
