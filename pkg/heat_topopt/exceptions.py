"""
Exception hierarchy for the topology-optimization engine.

Input problems subclass ValueError and numerical failures RuntimeError, so
callers that only know the builtin types keep working.
"""

from typing import List, Optional


class TopOptError(Exception):
    """Base class for all errors raised by heat_topopt."""


class GridError(TopOptError, ValueError):
    """Invalid grid, boundary specification or grid family."""


class DesignError(TopOptError, ValueError):
    """Invalid design field or design file."""


class ConfigError(TopOptError, ValueError):
    """Run configuration failed validation."""

    def __init__(self, message: str, errors: Optional[List[str]] = None):
        super().__init__(message)
        self.errors = errors or []


class SolverError(TopOptError, RuntimeError):
    """Iterative linear solve did not reach the requested tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class OptimizationError(TopOptError, RuntimeError):
    """The optimizer could not continue; partial history is attached when available."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history
