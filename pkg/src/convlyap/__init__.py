"""Converse Lyapunov functions for controlled Markov chains, computed from simulations."""

from .errors import ConfigurationError, ContractError, CoverageError, DomainError

__version__ = "0.1.0"

__all__ = ["ConfigurationError", "ContractError", "CoverageError", "DomainError", "__version__"]
