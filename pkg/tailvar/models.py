"""Domain types shared by the tailvar modules.

Every estimator, the experiment loop and the report writers exchange the
frozen dataclasses defined here.  Invariants are checked on construction,
so a value that exists is a valid value.  Array-valued types compare by
identity (``eq=False``); scalar types compare by value.
"""

from __future__ import annotations

import math
import sys
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from datetime import date
from enum import Enum

import numpy as np

from tailvar.errors import DegenerateVarianceError, DomainError, InsufficientDataError

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

# Seeds are plain 64-bit unsigned integers.
Seed = int
SEED_MAX = 2**64 - 1


def _require_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value!r}")


def _require_level(name: str, value: float) -> None:
    if not 0.0 < value < 1.0:
        raise DomainError(f"{name} must lie in (0, 1), got {value!r}")


def _as_bool(value: object) -> bool:
    if isinstance(value, str):
        return value.strip().lower() == "true"
    return bool(value)


# ---------------------------------------------------------------------------
# Distribution parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalParams:
    """Gaussian return law ``N(mu, sigma**2)`` in log-return units."""

    mu: float
    sigma: float

    def __post_init__(self) -> None:
        _require_finite("mu", self.mu)
        _require_finite("sigma", self.sigma)
        if self.sigma <= 0:
            raise DomainError(f"sigma must be > 0, got {self.sigma!r}")


@dataclass(frozen=True)
class StudentTParams:
    """Location-scale Student-t: ``loc + scale * T_nu`` with unit-scale ``T_nu``."""

    nu: float
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self) -> None:
        _require_finite("loc", self.loc)
        _require_finite("scale", self.scale)
        if not self.nu > 2:
            raise DomainError(f"nu must be > 2, got {self.nu!r}")
        if self.scale <= 0:
            raise DomainError(f"scale must be > 0, got {self.scale!r}")

    @property
    def variance(self) -> float:
        return self.scale**2 * self.nu / (self.nu - 2)


# ---------------------------------------------------------------------------
# Calibration data
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Daily closing prices indexed by strictly increasing dates."""

    dates: tuple[date, ...]
    closes: np.ndarray

    def __post_init__(self) -> None:
        closes = np.asarray(self.closes, dtype=float)
        object.__setattr__(self, "closes", closes)
        if len(self.dates) != closes.shape[0]:
            raise DomainError("dates and closes differ in length")
        if closes.shape[0] < 2:
            raise InsufficientDataError("a price series needs at least 2 closes")
        if not np.all(np.isfinite(closes)) or np.any(closes <= 0):
            bad = int(np.argmax(~(np.isfinite(closes) & (closes > 0))))
            raise DomainError(f"close at position {bad} is not a positive price")
        for i in range(1, len(self.dates)):
            if self.dates[i] <= self.dates[i - 1]:
                raise DomainError(f"dates not strictly increasing at position {i}")

    def __len__(self) -> int:
        return len(self.dates)


@dataclass(frozen=True, eq=False)
class ReturnSeries:
    """One-day log-returns; ``T = len(values)``."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise DomainError("returns must be one-dimensional")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def losses(self) -> np.ndarray:
        return -self.values


@dataclass(frozen=True)
class NominalModel:
    """Fitted Gaussian nominal model ``R ~ N(mu_hat, sigma_hat**2)``."""

    mu_hat: float
    sigma_hat: float
    sample_size: int = 0

    def __post_init__(self) -> None:
        _require_finite("mu_hat", self.mu_hat)
        _require_finite("sigma_hat", self.sigma_hat)
        if self.sigma_hat <= 0:
            raise DegenerateVarianceError(
                f"sigma_hat must be > 0, got {self.sigma_hat!r}"
            )

    @property
    def params(self) -> NormalParams:
        return NormalParams(self.mu_hat, self.sigma_hat)

    def implied_moments(self) -> dict[str, float]:
        """Mean, variance, skewness and kurtosis of the nominal *return* law."""
        return {
            "mean": self.mu_hat,
            "variance": self.sigma_hat**2,
            "skewness": 0.0,
            "kurtosis": 3.0,
        }

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> Self:
        return cls(
            mu_hat=float(d["mu_hat"]),
            sigma_hat=float(d["sigma_hat"]),
            sample_size=int(d.get("sample_size", 0)),
        )


@dataclass(frozen=True)
class TrueModel:
    """Variance-matched Student-t truth ``mu_star + s_nu * T_nu``."""

    nu: float
    mu_star: float
    s_nu: float

    def __post_init__(self) -> None:
        _require_finite("mu_star", self.mu_star)
        if not self.nu > 2:
            raise DomainError(f"nu must be > 2, got {self.nu!r}")
        if not self.s_nu > 0:
            raise DomainError(f"s_nu must be > 0, got {self.s_nu!r}")

    @property
    def params(self) -> StudentTParams:
        return StudentTParams(self.nu, self.mu_star, self.s_nu)

    @property
    def variance(self) -> float:
        return self.s_nu**2 * self.nu / (self.nu - 2)

    @classmethod
    def matched(cls, nominal: NominalModel, nu: float) -> TrueModel:
        """Truth with the nominal mean and variance at *nu* degrees of freedom."""
        from tailvar.truth import matched_model

        return matched_model(nominal, nu)

    def var(self, alpha: float) -> float:
        from tailvar.truth import true_var

        return true_var(self.mu_star, self.s_nu, self.nu, alpha)


# ---------------------------------------------------------------------------
# Importance sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TiltedProposal:
    """Mean-shifted proposal ``N(mu_hat - theta, sigma_hat**2)``.

    ``theta == 0`` is accepted and reproduces naive Monte Carlo; a negative
    tilt points the proposal away from the loss tail and is only allowed so
    that callers can observe it (see ``tilt_from_pilot``).
    """

    base: NominalModel
    theta: float

    def __post_init__(self) -> None:
        _require_finite("theta", self.theta)

    @property
    def mean(self) -> float:
        return self.base.mu_hat - self.theta

    @property
    def params(self) -> NormalParams:
        return NormalParams(self.mean, self.base.sigma_hat)

    def sample(self, n: int, seed: Seed) -> np.ndarray:
        """*n* proposal returns on the shared inverse-CDF stream."""
        from tailvar.distributions import sample_normal

        return sample_normal(self.params, n, seed)


@dataclass(frozen=True)
class ISDiagnostics:
    """Weight-stability diagnostics over the normalized weights."""

    ess: float
    max_weight_share: float

    def __post_init__(self) -> None:
        if not self.ess >= 1.0 - 1e-9:
            raise DomainError(f"ess must be >= 1, got {self.ess!r}")
        if not 0.0 < self.max_weight_share <= 1.0 + 1e-12:
            raise DomainError(
                f"max_weight_share must lie in (0, 1], got {self.max_weight_share!r}"
            )


@dataclass(frozen=True)
class TailEstimate:
    """Importance-sampling estimate of ``P(L > x)`` under the nominal model."""

    probability: float
    diagnostics: ISDiagnostics
    hits: int
    n_samples: int

    @property
    def zero_hits(self) -> bool:
        return self.hits == 0


@dataclass(frozen=True)
class ISVarResult:
    """Outcome of the IS bracketing + bisection VaR solve."""

    var_estimate: float
    bracket_lo: float
    bracket_hi: float
    iterations: int
    diagnostics: ISDiagnostics
    n_samples: int
    target_tail: float
    theta: float
    tol: float

    def __post_init__(self) -> None:
        if not self.bracket_lo <= self.var_estimate <= self.bracket_hi:
            raise DomainError("var_estimate lies outside its bracket")
        if self.bracket_hi - self.bracket_lo > self.tol:
            raise DomainError("final bracket is wider than the tolerance")

    @property
    def width(self) -> float:
        return self.bracket_hi - self.bracket_lo


# ---------------------------------------------------------------------------
# Discrete moment matching
# ---------------------------------------------------------------------------


class MomentSource(Enum):
    """Where a moment vector came from."""

    ANALYTIC = "analytic-gaussian"
    SAMPLED = "nominal-sample"


@dataclass(frozen=True, eq=False)
class LossGrid:
    """Ordered support ``X_0 < ... < X_m`` in loss units."""

    points: np.ndarray

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=float)
        if points.ndim != 1 or points.shape[0] < 2:
            raise DomainError("a loss grid needs at least two points")
        if not np.all(np.isfinite(points)):
            raise DomainError("grid points must be finite")
        if np.any(np.diff(points) <= 0):
            raise DomainError("grid points must be strictly increasing")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def m(self) -> int:
        return int(self.points.shape[0]) - 1

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class MomentVector:
    """Raw loss moments ``(mu_1, ..., mu_d)``; ``mu_0 = 1`` is implicit."""

    values: tuple[float, ...]
    source: MomentSource = MomentSource.ANALYTIC

    def __post_init__(self) -> None:
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        for v in values:
            _require_finite("moment", v)
        if len(values) >= 2 and not values[1] - values[0] ** 2 > 0:
            raise DomainError("implied variance mu_2 - mu_1**2 must be positive")

    @property
    def order(self) -> int:
        return len(self.values)

    def prefix(self, d: int) -> MomentVector:
        """The first *d* moments."""
        if not 0 <= d <= self.order:
            raise DomainError(f"order {d} not available (have {self.order})")
        return MomentVector(self.values[:d], self.source)

    def with_zeroth(self) -> np.ndarray:
        """``(1, mu_1, ..., mu_d)`` as an array."""
        return np.array((1.0, *self.values))


@dataclass(frozen=True, eq=False)
class CdfEnvelope:
    """Pointwise min/max CDF over the moment-feasible set at each grid point."""

    thresholds: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    statuses: tuple[str, ...]
    moment_order: int
    feasible: bool
    phase1_residual: float = 0.0


@dataclass(frozen=True)
class VarBracket:
    """Moment-consistent VaR interval at level *alpha*."""

    lower: float
    upper: float
    alpha: float
    moment_order: int
    feasible: bool
    phase1_residual: float = 0.0

    def __post_init__(self) -> None:
        _require_level("alpha", self.alpha)
        if self.feasible and not self.lower <= self.upper:
            raise DomainError("bracket lower bound exceeds upper bound")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @classmethod
    def infeasible(cls, alpha: float, moment_order: int, residual: float) -> Self:
        return cls(math.nan, math.nan, alpha, moment_order, False, residual)


@dataclass(frozen=True)
class MomentSweep:
    """VaR brackets for increasing moment order, up to the first infeasible one.

    *d_star* is the last feasible order (0 when even ``d = 1`` fails).
    *failed_status* is ``"infeasible"`` when phase 1 proved the order
    unmatchable and ``"numerical-failure"`` when the solver gave out on it.
    """

    brackets: tuple[VarBracket, ...]
    d_star: int
    failed_order: int | None = None
    failed_residual: float | None = None
    failed_status: str | None = None

    @property
    def frontier_reached(self) -> bool:
        return self.failed_order is not None

    @property
    def feasible_brackets(self) -> tuple[VarBracket, ...]:
        return tuple(b for b in self.brackets if b.feasible)


# ---------------------------------------------------------------------------
# Experiment records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationRecord:
    """One replication of the misspecification protocol for a (nu, alpha) cell.

    A failed replication keeps its identity fields, sets *failure* to a short
    tag (``"<ErrorClass>: message"``) and leaves the estimates as NaN.
    """

    rep_index: int
    nu: float
    alpha: float
    seed: int
    mu_hat: float = math.nan
    sigma_hat: float = math.nan
    true_var: float = math.nan
    is_var: float = math.nan
    is_bracket_lo: float = math.nan
    is_bracket_hi: float = math.nan
    is_iterations: int = 0
    ess: float = math.nan
    max_weight_share: float = math.nan
    dmm_lower: float = math.nan
    dmm_upper: float = math.nan
    dmm_midpoint: float = math.nan
    dmm_width: float = math.nan
    dmm_order: int = 0
    failure: str | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None

    @property
    def sort_key(self) -> tuple[float, float, int]:
        return (self.nu, self.alpha, self.rep_index)

    def to_dict(self) -> dict:
        d = asdict(self)
        # NaN is not valid JSON; failed fields become null.
        return {
            k: (None if isinstance(v, float) and math.isnan(v) else v)
            for k, v in d.items()
        }

    @classmethod
    def from_dict(cls, d: dict) -> Self:
        kwargs = {}
        for name in cls.__dataclass_fields__:
            if name not in d:
                continue
            value = d[name]
            if value is None and name != "failure":
                value = math.nan
            kwargs[name] = value
        return cls(**kwargs)


SUMMARY_COLUMNS: tuple[str, ...] = (
    "nu",
    "alpha",
    "trueVaR",
    "IS_mean",
    "IS_std",
    "IS_bias",
    "ESS",
    "maxW",
    "IS_variance",
    "IS_mse",
    "DMM_lower",
    "DMM_upper",
    "DMM_width",
    "DMM_mid_bias",
    "DMM_mid_variance",
    "DMM_mid_mse",
    "DMM_order",
    "n_success",
    "n_failed",
    "insufficient",
)


@dataclass(frozen=True)
class CellSummary:
    """Aggregates over the successful replications of one (nu, alpha) cell.

    The DMM midpoint statistics are descriptive only.
    """

    nu: float
    alpha: float
    n_success: int
    n_failed: int
    insufficient: bool
    true_var_mean: float = math.nan
    is_mean: float = math.nan
    is_std: float = math.nan
    is_bias: float = math.nan
    is_variance: float = math.nan
    is_mse: float = math.nan
    ess_mean: float = math.nan
    maxw_mean: float = math.nan
    dmm_lower_mean: float = math.nan
    dmm_upper_mean: float = math.nan
    dmm_width_mean: float = math.nan
    dmm_mid_bias: float = math.nan
    dmm_mid_variance: float = math.nan
    dmm_mid_mse: float = math.nan
    dmm_order_mean: float = math.nan

    def to_row(self) -> dict[str, float | int | bool]:
        """Row keyed by ``SUMMARY_COLUMNS``."""
        return {
            "nu": self.nu,
            "alpha": self.alpha,
            "trueVaR": self.true_var_mean,
            "IS_mean": self.is_mean,
            "IS_std": self.is_std,
            "IS_bias": self.is_bias,
            "ESS": self.ess_mean,
            "maxW": self.maxw_mean,
            "IS_variance": self.is_variance,
            "IS_mse": self.is_mse,
            "DMM_lower": self.dmm_lower_mean,
            "DMM_upper": self.dmm_upper_mean,
            "DMM_width": self.dmm_width_mean,
            "DMM_mid_bias": self.dmm_mid_bias,
            "DMM_mid_variance": self.dmm_mid_variance,
            "DMM_mid_mse": self.dmm_mid_mse,
            "DMM_order": self.dmm_order_mean,
            "n_success": self.n_success,
            "n_failed": self.n_failed,
            "insufficient": self.insufficient,
        }

    @classmethod
    def from_row(cls, row: dict) -> Self:
        return cls(
            nu=float(row["nu"]),
            alpha=float(row["alpha"]),
            n_success=int(row["n_success"]),
            n_failed=int(row["n_failed"]),
            insufficient=_as_bool(row["insufficient"]),
            true_var_mean=float(row["trueVaR"]),
            is_mean=float(row["IS_mean"]),
            is_std=float(row["IS_std"]),
            is_bias=float(row["IS_bias"]),
            is_variance=float(row["IS_variance"]),
            is_mse=float(row["IS_mse"]),
            ess_mean=float(row["ESS"]),
            maxw_mean=float(row["maxW"]),
            dmm_lower_mean=float(row["DMM_lower"]),
            dmm_upper_mean=float(row["DMM_upper"]),
            dmm_width_mean=float(row["DMM_width"]),
            dmm_mid_bias=float(row["DMM_mid_bias"]),
            dmm_mid_variance=float(row["DMM_mid_variance"]),
            dmm_mid_mse=float(row["DMM_mid_mse"]),
            dmm_order_mean=float(row["DMM_order"]),
        )


@dataclass(frozen=True)
class SummaryTable:
    """Table-1-shaped summary: one ``CellSummary`` per (nu, alpha), sorted."""

    cells: tuple[CellSummary, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "cells", tuple(sorted(self.cells, key=lambda c: (c.nu, c.alpha)))
        )

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)

    def cell(self, nu: float, alpha: float) -> CellSummary:
        for c in self.cells:
            if c.nu == nu and c.alpha == alpha:
                return c
        raise KeyError((nu, alpha))

    @property
    def nus(self) -> tuple[float, ...]:
        return tuple(sorted({c.nu for c in self.cells}))

    @property
    def alphas(self) -> tuple[float, ...]:
        return tuple(sorted({c.alpha for c in self.cells}))


def as_float_array(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """Finite float64 copy of *values* or DomainError."""
    arr = np.array(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("input contains non-finite values")
    return arr
