"""Exception hierarchy for the torus_lab package."""

from typing import Any, Optional, Tuple


class TorusLabError(Exception):
    """Base class for all torus-lab errors."""


class ConfigError(TorusLabError):
    """Raised when an experiment configuration or input file is invalid."""


class DimensionMismatch(TorusLabError, ValueError):
    """Raised when two objects of different dimension are combined."""

    def __init__(self, left: int, right: int) -> None:
        super().__init__(f'dimension mismatch: {left} != {right}')
        self.left = left
        self.right = right


class NumericalError(TorusLabError):
    """Base class for failures of a numerical procedure."""


class SmallDivisor(NumericalError):
    """Raised when a homological equation needs a divisor below the floor.

    Attributes:
        k: Offending Fourier index, reported in the half-space whose first
            nonzero entry is positive
        divisor: The value |k.omega|
    """

    def __init__(self, k: Tuple[int, ...], divisor: float, floor: float) -> None:
        super().__init__(
            f'small divisor |k.omega| = {divisor:.3e} < floor {floor:.3e} at k = {list(k)}'
        )
        self.k = k
        self.divisor = divisor
        self.floor = floor


class BudgetExceeded(NumericalError):
    """Raised when truncation budgets cannot hold the required terms."""


class ScanBudgetExceeded(BudgetExceeded):
    """Raised when a Diophantine scan would visit too many integer vectors."""


class ConvergenceError(NumericalError):
    """Raised when an iterative procedure does not reach its tolerance."""


class IntegrationError(NumericalError):
    """Raised when time stepping fails; carries whatever was computed so far."""

    def __init__(self, message: str, partial: Optional[Any] = None) -> None:
        super().__init__(message)
        self.partial = partial
