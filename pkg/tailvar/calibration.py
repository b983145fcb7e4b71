"""Turn closing prices into log-returns and fit the Gaussian nominal model.

Public API
----------
    log_returns(prices) -> ReturnSeries
    fit_gaussian_mle(returns) -> NominalModel
    gaussian_var(model, alpha) -> float
    calibrate(prices) -> NominalModel

Returns are taken between adjacent rows regardless of calendar gaps: a
weekend or holiday counts as one trading day.
"""

from __future__ import annotations

import numpy as np

from tailvar.distributions import normal_quantile
from tailvar.errors import DegenerateVarianceError, DomainError, InsufficientDataError
from tailvar.models import NominalModel, PriceSeries, ReturnSeries


def log_returns(prices: PriceSeries) -> ReturnSeries:
    """``R_t = log(S_t / S_{t-1})`` for consecutive closes."""
    closes = prices.closes
    if closes.shape[0] < 2:
        raise InsufficientDataError("need at least 2 prices for a return")
    if np.any(closes <= 0):
        raise DomainError("prices must be strictly positive")
    return ReturnSeries(np.diff(np.log(closes)))


def fit_gaussian_mle(returns: ReturnSeries) -> NominalModel:
    """Gaussian MLE with the 1/T variance normalization."""
    values = returns.values
    if len(returns) == 0:
        raise InsufficientDataError("cannot fit a model to an empty return series")
    if not np.all(np.isfinite(values)):
        raise DomainError("returns contain non-finite values")
    # A single return has zero 1/T variance, same as a constant series.
    if len(returns) == 1 or np.ptp(values) == 0:
        raise DegenerateVarianceError(
            f"zero sample variance over {len(returns)} return(s)"
        )
    mu_hat = float(np.mean(values))
    sigma_hat = float(np.std(values, ddof=0))
    return NominalModel(mu_hat=mu_hat, sigma_hat=sigma_hat, sample_size=len(returns))


def gaussian_var(model: NominalModel, alpha: float) -> float:
    """Closed-form nominal VaR ``x0 = -(mu_hat + sigma_hat * z_{1-alpha})``."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    return -(model.mu_hat + model.sigma_hat * normal_quantile(1.0 - alpha))


def calibrate(prices: PriceSeries) -> NominalModel:
    return fit_gaussian_mle(log_returns(prices))
