"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(ValueError):
    """A configuration value violates a structural constraint."""


class InputError(ValueError):
    """Input data violates a precondition (too short, mismatched, empty)."""


class StateError(RuntimeError):
    """An operation was called in the wrong lifecycle state."""


class FormatError(ValueError):
    """A serialized file is corrupt, truncated, or has the wrong magic/version."""
