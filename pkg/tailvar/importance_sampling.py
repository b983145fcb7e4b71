"""Exponentially tilted importance sampling for nominal-model VaR.

Public API
----------
    tilt_from_pilot(model, alpha) -> float
    log_likelihood_ratio(model, theta, r) -> ndarray
    likelihood_ratio(model, theta, r) -> float | ndarray
    diagnostics_from_weights(weights) -> ISDiagnostics
    diagnostics_from_log_weights(log_weights) -> ISDiagnostics
    estimate_tail_probability(model, theta, x, n, seed) -> TailEstimate
    solve_var_bisection(model, alpha, n, seed, tol, max_iter) -> ISVarResult
    naive_mc_var(model, alpha, n, seed) -> float

The proposal is the nominal Gaussian shifted by ``-theta`` with unchanged
variance, so the likelihood ratio is closed-form:

    W(r) = exp(theta * (r - mu) / sigma**2 + theta**2 / (2 * sigma**2))

A solve draws its *n* proposal returns once (``TailEstimator``) and every
bisection step re-reads the same draws.  With inverse-CDF sampling this is
the same estimate as reseeding the generator before each evaluation, and it
makes ``x -> p_hat(x)`` exactly non-increasing.
"""

from __future__ import annotations

import math

import numpy as np
import structlog
from scipy.special import logsumexp

from tailvar.calibration import gaussian_var
from tailvar.distributions import normal_quantile, sample_normal
from tailvar.errors import (
    BracketingError,
    ConvergenceError,
    DegenerateWeightsError,
    DomainError,
    WeightOverflowError,
)
from tailvar.models import (
    ISDiagnostics,
    ISVarResult,
    NominalModel,
    Seed,
    TailEstimate,
    TiltedProposal,
)

logger = structlog.get_logger()

DEFAULT_N = 100_000
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 100

# Initial bracket is x0 +/- 6 sigma_hat, pushed outward at most 5 times.
BRACKET_HALFWIDTH_SIGMAS = 6.0
MAX_BRACKET_EXPANSIONS = 5

_LOG_FLOAT_MAX = math.log(np.finfo(float).max)


# ---------------------------------------------------------------------------
# Tilt and weights
# ---------------------------------------------------------------------------


def tilt_from_pilot(model: NominalModel, alpha: float) -> float:
    """Tilt that centres the proposal on the pilot boundary: ``theta = mu_hat + x0``.

    ``mu_hat + x0`` simplifies to ``-sigma_hat * z_{1-alpha}``, which is
    evaluated directly.  A non-positive tilt is returned as-is with a warning;
    the proposal then samples away from (or no closer to) the loss tail.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    theta = -model.sigma_hat * normal_quantile(1.0 - alpha)
    if theta <= 0:
        logger.warning("tilt_nonpositive", theta=theta, alpha=alpha)
    return theta


def log_likelihood_ratio(model: NominalModel, theta: float, r) -> np.ndarray:
    var = model.sigma_hat**2
    r = np.asarray(r, dtype=float)
    return theta * (r - model.mu_hat) / var + theta**2 / (2.0 * var)


def likelihood_ratio(model: NominalModel, theta: float, r):
    """``f_P(r) / f_Q(r)``; WeightOverflowError instead of ``inf``."""
    log_w = log_likelihood_ratio(model, theta, r)
    peak = float(np.max(log_w))
    if peak > _LOG_FLOAT_MAX:
        raise WeightOverflowError(peak)
    w = np.exp(log_w)
    return float(w) if np.ndim(r) == 0 else w


def diagnostics_from_log_weights(log_weights) -> ISDiagnostics:
    """ESS and max normalized share from unnormalized log weights.

    Normalization happens in log space (logsumexp), so the diagnostics are
    finite even when the raw weights would overflow.
    """
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0 or not np.any(np.isfinite(lw)):
        raise DegenerateWeightsError("no strictly positive weight")
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise DomainError("log weights must be finite or -inf")
    n = lw.size
    log_norm = lw - logsumexp(lw)
    ess = float(np.exp(-logsumexp(2.0 * log_norm)))
    max_share = float(np.exp(np.max(log_norm)))
    return ISDiagnostics(
        ess=min(max(ess, 1.0), float(n)),
        max_weight_share=min(max(max_share, 1.0 / n), 1.0),
    )


def diagnostics_from_weights(weights) -> ISDiagnostics:
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise DegenerateWeightsError("empty weight vector")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DomainError("weights must be finite and non-negative")
    if not np.any(w > 0):
        raise DegenerateWeightsError("all weights are zero")
    with np.errstate(divide="ignore"):
        return diagnostics_from_log_weights(np.log(w))


# ---------------------------------------------------------------------------
# Tail probability under common random numbers
# ---------------------------------------------------------------------------


class TailEstimator:
    """``p_hat(x) = (1/n) * sum 1{R_i < -x} W(R_i)`` over one fixed proposal sample.

    Draws are sorted once and their weights accumulated, so each evaluation
    is a binary search.  Diagnostics cover all *n* weights.
    """

    def __init__(self, model: NominalModel, theta: float, n: int, seed: Seed) -> None:
        self.proposal = TiltedProposal(model, theta)
        self.n = n
        draws = self.proposal.sample(n, seed)
        log_w = log_likelihood_ratio(model, theta, draws)
        peak = float(np.max(log_w))
        if peak > _LOG_FLOAT_MAX:
            raise WeightOverflowError(peak)
        order = np.argsort(draws, kind="stable")
        self._returns = draws[order]
        self._cum_weights = np.cumsum(np.exp(log_w[order]))
        self.diagnostics = diagnostics_from_log_weights(log_w)

    def hits(self, x: float) -> int:
        """Number of draws with ``R < -x``."""
        return int(np.searchsorted(self._returns, -x, side="left"))

    def tail_probability(self, x: float) -> float:
        k = self.hits(x)
        if k == 0:
            return 0.0
        return float(self._cum_weights[k - 1]) / self.n

    def estimate(self, x: float) -> TailEstimate:
        return TailEstimate(
            probability=self.tail_probability(x),
            diagnostics=self.diagnostics,
            hits=self.hits(x),
            n_samples=self.n,
        )


def estimate_tail_probability(
    model: NominalModel, theta: float, x: float, n: int, seed: Seed
) -> TailEstimate:
    """Unbiased IS estimate of ``P(L > x)`` under the nominal model."""
    estimate = TailEstimator(model, theta, n, seed).estimate(x)
    if estimate.zero_hits:
        logger.debug("tail_zero_hits", x=x, theta=theta, n=n)
    return estimate


# ---------------------------------------------------------------------------
# VaR root-finding
# ---------------------------------------------------------------------------


def solve_var_bisection(
    model: NominalModel,
    alpha: float,
    n: int = DEFAULT_N,
    seed: Seed = 0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    theta: float | None = None,
    halfwidth_sigmas: float = BRACKET_HALFWIDTH_SIGMAS,
    max_expansions: int = MAX_BRACKET_EXPANSIONS,
) -> ISVarResult:
    """Solve ``p_hat(x) = 1 - alpha`` by bracketing and bisection.

    *theta* defaults to the pilot tilt; ``theta=0`` gives plain Monte Carlo
    root-finding.  The estimate is the midpoint of the final bracket.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    if not tol > 0:
        raise DomainError(f"tol must be > 0, got {tol!r}")
    if not halfwidth_sigmas > 0:
        raise DomainError("initial bracket half-width must be > 0")

    target = 1.0 - alpha
    if theta is None:
        theta = tilt_from_pilot(model, alpha)
    estimator = TailEstimator(model, theta, n, seed)

    x0 = gaussian_var(model, alpha)
    half = halfwidth_sigmas * model.sigma_hat
    lo, hi = _find_bracket(estimator, target, x0 - half, x0 + half, max_expansions)

    iterations = 0
    while hi - lo > tol:
        if iterations >= max_iter:
            raise ConvergenceError(
                f"bisection did not converge in {max_iter} steps", lo, hi
            )
        mid = 0.5 * (lo + hi)
        if estimator.tail_probability(mid) >= target:
            lo = mid
        else:
            hi = mid
        iterations += 1

    logger.debug(
        "bisection_converged", alpha=alpha, iterations=iterations, lo=lo, hi=hi
    )
    return ISVarResult(
        var_estimate=0.5 * (lo + hi),
        bracket_lo=lo,
        bracket_hi=hi,
        iterations=iterations,
        diagnostics=estimator.diagnostics,
        n_samples=n,
        target_tail=target,
        theta=theta,
        tol=tol,
    )


def _find_bracket(
    estimator: TailEstimator,
    target: float,
    lo: float,
    hi: float,
    max_expansions: int,
) -> tuple[float, float]:
    """Widen ``[lo, hi]`` until ``p(lo) >= target >= p(hi)``."""
    width = hi - lo
    for attempt in range(max_expansions + 1):
        lo_ok = estimator.tail_probability(lo) >= target
        hi_ok = estimator.tail_probability(hi) <= target
        if lo_ok and hi_ok:
            return lo, hi
        if attempt == max_expansions:
            break
        if not lo_ok:
            lo -= width
        if not hi_ok:
            hi += width
        width *= 2.0
        logger.debug("bracket_expanded", attempt=attempt + 1, lo=lo, hi=hi)
    raise BracketingError(f"no bracket after {max_expansions} expansions", lo, hi)


def naive_mc_var(model: NominalModel, alpha: float, n: int, seed: Seed) -> float:
    """Empirical alpha-quantile of *n* nominal losses (plain Monte Carlo)."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    losses = -sample_normal(model.params, n, seed)
    return float(np.quantile(losses, alpha, method="inverted_cdf"))
