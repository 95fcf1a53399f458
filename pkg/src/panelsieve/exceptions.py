"""Exception types shared across the package."""


class DomainError(ValueError):
    """An evaluation point lies outside the declared domain box."""


class DimensionError(ValueError):
    """Array shapes or dimensions do not match the declared setup."""


class RankDeficiencyError(ArithmeticError):
    """A matrix that must be invertible is (numerically) rank deficient."""


class ConditioningError(ArithmeticError):
    """A computation was aborted because of near-singular conditioning."""

    def __init__(self, message, lambda_min=None, lambda_max=None):
        super().__init__(message)
        self.lambda_min = lambda_min
        self.lambda_max = lambda_max


class IdentificationError(ValueError):
    """A model component is not identified from the supplied data."""


class InconsistentConstraintError(ValueError):
    """A linearly dependent restriction contradicts the others."""


class LeverageError(ArithmeticError):
    """A task is pinned by the basis (hat diagonal numerically one)."""


class SelectionError(RuntimeError):
    """No candidate specification satisfies the selection preconditions."""
