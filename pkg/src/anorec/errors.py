"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input data or configuration violates a documented contract."""


class ConvergenceError(RuntimeError):
    """An iterative solver exhausted its iteration budget."""
