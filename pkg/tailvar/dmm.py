"""Discrete moment matching: moment-consistent CDF envelopes and VaR brackets.

Public API
----------
    build_grid(model, m, span) -> LossGrid
    raw_moments(losses, d) -> MomentVector
    analytic_gaussian_moments(model, d) -> MomentVector
    nominal_moments(model, d, source, n, seed) -> MomentVector
    GridTransform, standardize_moments(moments, transform) -> ndarray
    cdf_envelope(grid, moments) -> CdfEnvelope
    var_bounds(envelope, alpha) -> VarBracket
    moment_bracket(grid, moments, alpha) -> VarBracket
    moment_sweep(grid, moments_full, alpha, d_max) -> MomentSweep
    dmm_midpoint(bracket) -> float

The feasible set is every probability vector ``p`` on the grid whose first
*d* raw moments equal the targets.  Constraints are assembled after mapping
the grid affinely onto [-1, 1] (moments follow through the binomial
expansion), which leaves the feasible set unchanged.  For a threshold
``X_j`` the envelope values are the min and max of ``sum_{i <= j} p_i``
over that set.

``F-`` crosses a level no earlier than ``F+``, so the first grid point where
``F+ >= alpha`` is the *lower* VaR bound and the first where ``F- >= alpha``
is the *upper* one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import structlog
from scipy.special import comb, factorial2

from tailvar.distributions import sample_normal
from tailvar.errors import DomainError, GridTooShortError, LPNumericalError
from tailvar.lp_solver import ConstraintSystem, LPStatus, Sense
from tailvar.models import (
    CdfEnvelope,
    LossGrid,
    MomentSource,
    MomentSweep,
    MomentVector,
    NominalModel,
    Seed,
    VarBracket,
    as_float_array,
)

logger = structlog.get_logger()

DEFAULT_GRID_POINTS = 200
DEFAULT_SPAN = 8.0
DEFAULT_MOMENT_SAMPLES = 100_000
DEFAULT_D_MAX = 7

# Envelope values within this of alpha count as reaching it.
LEVEL_TOL = 1e-9


# ---------------------------------------------------------------------------
# Grid and moments
# ---------------------------------------------------------------------------


def build_grid(
    model: NominalModel, m: int = DEFAULT_GRID_POINTS, span: float = DEFAULT_SPAN
) -> LossGrid:
    """Uniform grid of ``m + 1`` losses over ``-mu_hat +/- span * sigma_hat``."""
    if int(m) != m or m < 1:
        raise DomainError(f"m must be an integer >= 1, got {m!r}")
    if not span > 0:
        raise DomainError(f"span must be > 0, got {span!r}")
    centre = -model.mu_hat
    half = span * model.sigma_hat
    return LossGrid(np.linspace(centre - half, centre + half, int(m) + 1))


def raw_moments(
    losses, d: int, source: MomentSource = MomentSource.SAMPLED
) -> MomentVector:
    """Sample raw moments ``mean(L**r)`` for ``r = 1..d``."""
    if d < 1:
        raise DomainError(f"moment order must be >= 1, got {d!r}")
    values = as_float_array(losses).ravel()
    if values.size == 0:
        raise DomainError("cannot take moments of an empty sample")
    powers = np.ones_like(values)
    moments = []
    for _ in range(d):
        powers = powers * values
        moments.append(float(np.mean(powers)))
    return MomentVector(tuple(moments), source)


def analytic_gaussian_moments(model: NominalModel, d: int) -> MomentVector:
    """Exact raw moments of ``L = -R`` for ``R ~ N(mu_hat, sigma_hat**2)``."""
    if d < 1:
        raise DomainError(f"moment order must be >= 1, got {d!r}")
    mean = -model.mu_hat
    sigma = model.sigma_hat
    moments = []
    for r in range(1, d + 1):
        total = 0.0
        for k in range(0, r + 1, 2):
            central = sigma**k * (factorial2(k - 1, exact=True) if k else 1)
            total += comb(r, k, exact=True) * mean ** (r - k) * central
        moments.append(total)
    return MomentVector(tuple(moments), MomentSource.ANALYTIC)


def nominal_moments(
    model: NominalModel,
    d: int,
    source: MomentSource = MomentSource.SAMPLED,
    n: int = DEFAULT_MOMENT_SAMPLES,
    seed: Seed = 0,
) -> MomentVector:
    """Loss moments of the nominal model, sampled (default) or exact."""
    if source is MomentSource.ANALYTIC:
        return analytic_gaussian_moments(model, d)
    losses = -sample_normal(model.params, n, seed)
    return raw_moments(losses, d, MomentSource.SAMPLED)


@dataclass(frozen=True)
class GridTransform:
    """Affine map ``y = (x - centre) / half_width`` taking the grid onto [-1, 1]."""

    centre: float
    half_width: float

    @classmethod
    def from_grid(cls, grid: LossGrid) -> GridTransform:
        lo, hi = float(grid.points[0]), float(grid.points[-1])
        return cls(0.5 * (lo + hi), 0.5 * (hi - lo))

    def to_unit(self, x):
        return (np.asarray(x, dtype=float) - self.centre) / self.half_width

    def from_unit(self, y):
        return self.centre + self.half_width * np.asarray(y, dtype=float)


def standardize_moments(moments: MomentVector, transform: GridTransform) -> np.ndarray:
    """``(1, E[Y], ..., E[Y**d])`` for ``Y = (L - c) / h``, by binomial expansion."""
    mu = moments.with_zeroth()
    c, h = transform.centre, transform.half_width
    out = np.empty(moments.order + 1)
    for r in range(moments.order + 1):
        total = sum(
            comb(r, k, exact=True) * mu[k] * (-c) ** (r - k) for k in range(r + 1)
        )
        out[r] = total / h**r
    return out


def _constraint_system(grid: LossGrid, moments: MomentVector) -> ConstraintSystem:
    transform = GridTransform.from_grid(grid)
    y = transform.to_unit(grid.points)
    matrix = np.vander(y, moments.order + 1, increasing=True).T
    return ConstraintSystem(matrix, standardize_moments(moments, transform))


def _cdf_objective(m: int, j: int) -> np.ndarray:
    objective = np.zeros(m + 1)
    objective[: j + 1] = 1.0
    return objective


def _phase_one_failure(system: ConstraintSystem) -> LPNumericalError:
    return LPNumericalError(
        f"ended {system.status.value}", residual=system.phase1_residual
    )


def _cdf_value(system: ConstraintSystem, m: int, j: int, sense: Sense) -> float:
    outcome = system.optimize(_cdf_objective(m, j), sense)
    if outcome.status is not LPStatus.OPTIMAL:
        raise LPNumericalError(
            f"{sense.value} CDF LP ended {outcome.status.value}",
            j,
            system.phase1_residual,
        )
    return min(max(outcome.value, 0.0), 1.0)


# ---------------------------------------------------------------------------
# Envelopes and brackets
# ---------------------------------------------------------------------------


def cdf_envelope(grid: LossGrid, moments: MomentVector) -> CdfEnvelope:
    """Min/max CDF at every grid point over the moment-feasible set."""
    system = _constraint_system(grid, moments)
    thresholds = grid.points.copy()
    if not system.feasible:
        if system.status is not LPStatus.INFEASIBLE:
            raise _phase_one_failure(system)
        n = len(grid)
        return CdfEnvelope(
            thresholds=thresholds,
            lower=np.full(n, np.nan),
            upper=np.full(n, np.nan),
            statuses=(LPStatus.INFEASIBLE.value,) * n,
            moment_order=moments.order,
            feasible=False,
            phase1_residual=system.phase1_residual,
        )

    indices = range(len(grid))
    lower = np.array([_cdf_value(system, grid.m, j, Sense.MINIMIZE) for j in indices])
    upper = np.array([_cdf_value(system, grid.m, j, Sense.MAXIMIZE) for j in indices])
    return CdfEnvelope(
        thresholds=thresholds,
        lower=lower,
        upper=upper,
        statuses=(LPStatus.OPTIMAL.value,) * len(grid),
        moment_order=moments.order,
        feasible=True,
        phase1_residual=system.phase1_residual,
    )


def var_bounds(envelope: CdfEnvelope, alpha: float) -> VarBracket:
    """Invert the envelopes at *alpha* (left-continuous, first crossing).

    An infeasible envelope gives an infeasible bracket.  With every grid
    point as a threshold the last envelope value is 1, so GridTooShortError
    only arises for envelopes over a partial threshold set.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    if not envelope.feasible:
        return VarBracket.infeasible(
            alpha, envelope.moment_order, envelope.phase1_residual
        )
    level = alpha - LEVEL_TOL
    reached_upper = np.flatnonzero(envelope.upper >= level)
    reached_lower = np.flatnonzero(envelope.lower >= level)
    if reached_upper.size == 0 or reached_lower.size == 0:
        raise GridTooShortError(alpha)
    return VarBracket(
        lower=float(envelope.thresholds[reached_upper[0]]),
        upper=float(envelope.thresholds[reached_lower[0]]),
        alpha=alpha,
        moment_order=envelope.moment_order,
        feasible=True,
        phase1_residual=envelope.phase1_residual,
    )


def moment_bracket(grid: LossGrid, moments: MomentVector, alpha: float) -> VarBracket:
    """Same bracket as ``var_bounds(cdf_envelope(grid, moments), alpha)``.

    Both envelopes are monotone in the threshold index, so each crossing is
    found by binary search: about ``2 * log2(m)`` LPs instead of ``2 * (m + 1)``.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    system = _constraint_system(grid, moments)
    if not system.feasible:
        if system.status is not LPStatus.INFEASIBLE:
            raise _phase_one_failure(system)
        return VarBracket.infeasible(alpha, moments.order, system.phase1_residual)

    level = alpha - LEVEL_TOL

    def first_crossing(sense: Sense) -> int:
        lo, hi = 0, grid.m
        if _cdf_value(system, grid.m, hi, sense) < level:
            raise GridTooShortError(alpha)
        while lo < hi:
            mid = (lo + hi) // 2
            if _cdf_value(system, grid.m, mid, sense) >= level:
                hi = mid
            else:
                lo = mid + 1
        return lo

    return VarBracket(
        lower=float(grid.points[first_crossing(Sense.MAXIMIZE)]),
        upper=float(grid.points[first_crossing(Sense.MINIMIZE)]),
        alpha=alpha,
        moment_order=moments.order,
        feasible=True,
        phase1_residual=system.phase1_residual,
    )


def moment_sweep(
    grid: LossGrid, moments_full: MomentVector, alpha: float, d_max: int
) -> MomentSweep:
    """Brackets for ``d = 1..d_max``, stopping at the first order that fails.

    An order fails when phase 1 finds no matching grid law, or when the
    solver gives out on it (pivot budget, singular basis).  Either way the
    failure is recorded as an infeasible bracket, kept as the last entry,
    and ``d_star`` is the order before it (or *d_max* when every order is
    feasible).
    """
    if not 1 <= d_max <= moments_full.order:
        raise DomainError(
            f"d_max must lie in [1, {moments_full.order}], got {d_max!r}"
        )
    brackets: list[VarBracket] = []
    for d in range(1, d_max + 1):
        status = LPStatus.INFEASIBLE
        try:
            bracket = moment_bracket(grid, moments_full.prefix(d), alpha)
        except LPNumericalError as exc:
            status = LPStatus.NUMERICAL_FAILURE
            bracket = VarBracket.infeasible(alpha, d, exc.residual)
            logger.warning("moment_order_unsolved", order=d, error=str(exc))
        brackets.append(bracket)
        if not bracket.feasible:
            logger.info(
                "moment_order_infeasible",
                order=d,
                status=status.value,
                phase1_residual=bracket.phase1_residual,
                alpha=alpha,
            )
            return MomentSweep(
                tuple(brackets),
                d_star=d - 1,
                failed_order=d,
                failed_residual=bracket.phase1_residual,
                failed_status=status.value,
            )
    return MomentSweep(tuple(brackets), d_star=d_max)


def dmm_midpoint(bracket: VarBracket) -> float:
    """Point summary ``(lower + upper) / 2``; ``bracket.width`` goes alongside it."""
    if not bracket.feasible:
        raise DomainError("no midpoint for an infeasible bracket")
    return 0.5 * (bracket.lower + bracket.upper)
