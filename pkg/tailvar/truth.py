"""Variance-matched Student-t truth and its analytic VaR.

Public API
----------
    variance_matched_scale(nu, sigma_hat) -> float
    matched_model(nominal, nu) -> TrueModel
    sample_true_returns(model, t_count, seed) -> ReturnSeries
    true_var(mu_hat, s_nu, nu, alpha) -> float

The truth shares the nominal mean and variance and differs only in its
tails: ``R* = mu_hat + s_nu * T_nu`` with ``s_nu**2 * nu / (nu - 2) = sigma_hat**2``.
``s_nu`` multiplies the *unit-scale* t quantile, not a unit-variance one.
"""

from __future__ import annotations

import math

from tailvar.distributions import sample_student_t, student_t_quantile
from tailvar.errors import DomainError, InsufficientDataError
from tailvar.models import NominalModel, ReturnSeries, Seed, TrueModel


def variance_matched_scale(nu: float, sigma_hat: float) -> float:
    """``s_nu = sigma_hat * sqrt((nu - 2) / nu)``."""
    if not nu > 2:
        raise DomainError(f"variance matching needs nu > 2, got {nu!r}")
    if not sigma_hat > 0:
        raise DomainError(f"sigma_hat must be > 0, got {sigma_hat!r}")
    return sigma_hat * math.sqrt((nu - 2.0) / nu)


def matched_model(nominal: NominalModel, nu: float) -> TrueModel:
    return TrueModel(
        nu=nu,
        mu_star=nominal.mu_hat,
        s_nu=variance_matched_scale(nu, nominal.sigma_hat),
    )


def sample_true_returns(model: TrueModel, t_count: int, seed: Seed) -> ReturnSeries:
    """*t_count* i.i.d. returns ``mu_star + s_nu * T_nu``."""
    if t_count < 2:
        raise InsufficientDataError(f"need at least 2 returns, got {t_count!r}")
    return ReturnSeries(sample_student_t(model.params, t_count, seed))


def true_var(mu_hat: float, s_nu: float, nu: float, alpha: float) -> float:
    """``x*_alpha = -(mu_hat + s_nu * t_{nu, 1 - alpha})``."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    return -(mu_hat + s_nu * student_t_quantile(nu, 1.0 - alpha))
