"""Exception types shared across the package."""


class ChainError(ValueError):
    """Invalid chain specification or violated structural invariant."""


class NumericsError(RuntimeError):
    """A numeric computation failed to meet its accuracy contract."""
