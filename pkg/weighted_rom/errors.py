from typing import Optional, Sequence


class RomError(Exception):
    """Base class for errors raised by weighted_rom."""


class ConfigRejectedError(RomError, ValueError):
    """Experiment configuration outside the supported method/sampling/weight grid."""


class TruthSolveError(RomError, RuntimeError):
    def __init__(self, message: str, y: Optional[Sequence[float]] = None) -> None:
        self.y = None if y is None else [float(v) for v in y]
        super().__init__(f"{message} (y={self.y})")


class ReducedSystemSingularError(RomError, RuntimeError):
    """The reduced Galerkin matrix is (numerically) singular at some parameter."""

    def __init__(self, n: int, y: Sequence[float], condition: float) -> None:
        self.n = int(n)
        self.y = [float(v) for v in y]
        # basis of dimension n - 1 built before the breakdown, when the builder can supply it
        self.partial_basis = None
        self.condition = float(condition)
        super().__init__(
            f"Singular reduced order system: N={self.n}, y={self.y}, condition estimate {self.condition:.3e}"
        )


class EstimatorError(RomError, RuntimeError):
    pass


__all__ = [
    "RomError",
    "ConfigRejectedError",
    "TruthSolveError",
    "ReducedSystemSingularError",
    "EstimatorError",
]
