"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the function being evaluated."""


class ContractError(ValueError):
    """An input object violates a structural precondition (monotonicity, convexity, ...)."""


class ConfigurationError(ValueError):
    """Inconsistent sizes, grids or parameters supplied by the caller."""


class CoverageError(RuntimeError):
    """No sampled trajectory satisfied the envelope that defines the good event."""

    def __init__(self, message: str, coverage: float):
        super().__init__(message)
        self.coverage = coverage
