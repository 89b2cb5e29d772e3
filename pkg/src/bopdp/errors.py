"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument or input violates a documented precondition."""


class ModelFitError(RuntimeError):
    """Surrogate fitting failed beyond recoverable numerical jitter."""


class EstimationError(RuntimeError):
    """A PDP or score could not be estimated from the given members."""


class UnsupportedSplitError(ValueError):
    """A split candidate is outside what the partitioner supports."""
