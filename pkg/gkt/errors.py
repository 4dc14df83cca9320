"""Exception hierarchy shared by every gkt module."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional


class GKTError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(GKTError, ValueError):
    """Operand shapes do not conform."""


class UnsupportedSizeError(DimensionError):
    """A length the kernel does not handle (e.g. non power-of-two FFT)."""


class ConfigError(GKTError, ValueError):
    """Invalid configuration value or combination."""


class NotSPDError(GKTError, ArithmeticError):
    """Matrix failed a symmetric positive definite check."""


class RankError(NotSPDError):
    """Basis set or mixed matrix is rank deficient."""


class DegenerateError(RankError):
    """Smallest singular value below the usable threshold."""


class NumericalError(GKTError, ArithmeticError):
    """Non-finite values or an iteration that did not converge."""


class InstabilityError(NumericalError):
    """Time integration blew up."""


class SolverError(NumericalError):
    """Iterative linear solver did not reach its tolerance."""


class UndefinedMetricError(GKTError, ValueError):
    """Metric is undefined for the given arguments."""


class FormatError(GKTError, ValueError):
    """Malformed dataset or checkpoint file."""


class TrainingDivergedError(NumericalError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, epoch: int, report: Optional[Any] = None) -> None:
        super().__init__(message)
        self.epoch = epoch
        self.report = report


@dataclass(frozen=True)
class ErrorReport:
    """Exception and formatted traceback shipped back from a worker thread."""
    exception: BaseException
    traceback: str

    def to_dict(self) -> dict[str, str]:
        return {
            "type": type(self.exception).__name__,
            "message": str(self.exception),
        }


__all__ = [
    "GKTError",
    "DimensionError",
    "UnsupportedSizeError",
    "ConfigError",
    "NotSPDError",
    "RankError",
    "DegenerateError",
    "NumericalError",
    "InstabilityError",
    "SolverError",
    "UndefinedMetricError",
    "FormatError",
    "TrainingDivergedError",
    "ErrorReport",
]
