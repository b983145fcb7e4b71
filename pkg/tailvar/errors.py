"""Exception hierarchy shared by every tailvar module.

Statuses that are part of a result (LP infeasibility, an infeasible moment
order, zero importance-sampling hits, a failed replication) are reported as
data on the result objects.  The exceptions below are reserved for calls
that cannot produce a result at all.
"""

from __future__ import annotations


class TailVarError(Exception):
    """Base class for all tailvar errors."""


class DomainError(TailVarError, ValueError):
    """Raised when an argument lies outside the domain of an operation."""


class InsufficientDataError(TailVarError):
    """Raised when a series is too short for the requested computation."""


class DegenerateVarianceError(TailVarError):
    """Raised when a return sample has zero dispersion."""


class PriceDataError(TailVarError):
    """Raised for a malformed price file; *row* is the 1-based data row."""

    def __init__(self, message: str, row: int | None = None) -> None:
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class WeightOverflowError(TailVarError):
    """Raised when a likelihood ratio would overflow a float64."""

    def __init__(self, log_weight: float) -> None:
        super().__init__(f"likelihood ratio overflows (log-weight {log_weight:.6g})")
        self.log_weight = log_weight


class DegenerateWeightsError(TailVarError):
    """Raised when no importance weight is strictly positive."""


class BracketingError(TailVarError):
    """Raised when no interval brackets the VaR root after expansion."""

    def __init__(self, message: str, lo: float, hi: float) -> None:
        super().__init__(f"{message} (last bracket [{lo:.6g}, {hi:.6g}])")
        self.lo = lo
        self.hi = hi


class ConvergenceError(TailVarError):
    """Raised when bisection exhausts its iteration budget."""

    def __init__(self, message: str, lo: float, hi: float) -> None:
        super().__init__(f"{message} (last bracket [{lo:.6g}, {hi:.6g}])")
        self.lo = lo
        self.hi = hi


class GridTooShortError(TailVarError):
    """Raised when the upper CDF envelope never reaches *alpha* on the grid."""

    def __init__(self, alpha: float) -> None:
        super().__init__(f"CDF envelope never reaches alpha={alpha} on the grid")
        self.alpha = alpha


class LPNumericalError(TailVarError):
    """Raised when an envelope LP fails numerically.

    *threshold_index* is the grid index of the failing CDF LP, or None when
    phase 1 itself gave out.
    """

    def __init__(
        self, message: str, threshold_index: int | None = None, residual: float = 0.0
    ) -> None:
        where = "phase 1" if threshold_index is None else f"threshold {threshold_index}"
        super().__init__(f"{where}: {message}")
        self.threshold_index = threshold_index
        self.residual = residual


class ConfigError(TailVarError):
    """Raised for an invalid configuration value; *key* names the entry."""

    def __init__(self, message: str, key: str | None = None) -> None:
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class ReportFormatError(TailVarError):
    """Raised when a stored summary, record file or manifest cannot be read back."""
