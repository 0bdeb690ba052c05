"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Shapes, widths, or settings that cannot be reconciled."""


class InputError(ValueError):
    """Data that violates a documented precondition (non-finite, out of range)."""
