"""Exception types shared across the toolkit.

I/O failures use the builtin OSError hierarchy; these two cover contract
violations. The CLI maps OSError to exit 1 and these to exit 2.
"""


class ValidationError(ValueError):
    """An input violates a documented contract (shape, range, format, stage)."""


class ConfigurationError(ValueError):
    """A run configuration is unusable (empty class, empty split, bad key)."""
