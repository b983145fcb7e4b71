"""Replicated misspecification study: Student-t truth, Gaussian estimators.

Public API
----------
    replication_seed(cfg, nu, alpha, rep_index) -> int
    run_replication(cfg, nu, alpha, rep_index) -> ReplicationRecord
    run_replications(cfg, workers=1, *, verbose=False) -> list[ReplicationRecord]
    summarize(records) -> SummaryTable
    run_experiment(cfg, workers=1) -> SummaryTable
    run_baseline(model, alpha, ...) -> BaselineCheck
    emit_figure_data(table, records, cfg) -> dict[str, DataFrame]

One replication of a (nu, alpha) cell:

    1. draw ``t_obs`` returns from the variance-matched t truth
    2. refit the Gaussian nominal model to them
    3. evaluate the analytic true VaR at the refit mean
    4. bracket the VaR by moment matching on the refit model
    5. solve for the IS VaR with the pilot tilt of the refit model

Each step draws from its own substream of the replication seed, so a
record is a pure function of ``(cfg, nu, alpha, rep_index)`` and the
summary does not depend on how replications are scheduled.
"""

from __future__ import annotations

import concurrent.futures
import math
from collections import defaultdict
from collections.abc import Iterable
from dataclasses import dataclass
from multiprocessing.context import BaseContext

import numpy as np
import pandas as pd
import structlog

from tailvar.calibration import fit_gaussian_mle, gaussian_var
from tailvar.config import ExperimentConfig
from tailvar.distributions import derive_seed, normal_cdf
from tailvar.dmm import (
    build_grid,
    cdf_envelope,
    dmm_midpoint,
    moment_bracket,
    moment_sweep,
    nominal_moments,
)
from tailvar.errors import DomainError, TailVarError
from tailvar.importance_sampling import (
    DEFAULT_N,
    naive_mc_var,
    solve_var_bisection,
)
from tailvar.logging import configure as configure_logging
from tailvar.models import (
    CellSummary,
    ISVarResult,
    MomentSource,
    MomentSweep,
    NominalModel,
    ReplicationRecord,
    ReturnSeries,
    SummaryTable,
    TrueModel,
    VarBracket,
)
from tailvar.truth import sample_true_returns, true_var

logger = structlog.get_logger()

# Substream labels under a replication seed.
_TRUTH_STREAM = "truth"
_MOMENT_STREAM = "moments"
_IS_STREAM = "is"
_MC_STREAM = "mc"

FIGURE_NAMES = (
    "figure_1_bracketing",
    "figure_2_moment_sensitivity",
    "figure_3_calibration",
    "figure_4_bias_vs_nu",
    "figure_5_std_vs_nu",
    "figure_6_diagnostics_vs_alpha",
    "figure_7_bias_vs_ess",
)
BRACKETING_COLUMNS = (
    "loss",
    "empirical_cdf",
    "nominal_cdf",
    "cdf_lower",
    "cdf_upper",
    "var_lower",
    "var_upper",
    "true_var",
    "is_var",
    "mc_var",
)
SENSITIVITY_COLUMNS = ("order", "lower", "upper", "feasible", "phase1_residual")


# ---------------------------------------------------------------------------
# One replication
# ---------------------------------------------------------------------------


def replication_seed(
    cfg: ExperimentConfig, nu: float, alpha: float, rep_index: int
) -> int:
    """Substream seed of one replication.

    With ``common_streams`` every cell shares the seed of a replication
    index, so the t draws of different nu come from the same uniforms.
    """
    if cfg.common_streams:
        return derive_seed(cfg.master_seed, rep_index)
    return derive_seed(cfg.master_seed, float(nu), float(alpha), rep_index)


def base_model(cfg: ExperimentConfig) -> NominalModel:
    return NominalModel(cfg.mu_nominal, cfg.sigma_nominal)


def _refit(
    cfg: ExperimentConfig, nu: float, seed: int
) -> tuple[TrueModel, ReturnSeries, NominalModel]:
    truth = TrueModel.matched(base_model(cfg), nu)
    returns = sample_true_returns(truth, cfg.t_obs, derive_seed(seed, _TRUTH_STREAM))
    return truth, returns, fit_gaussian_mle(returns)


def _sweep(
    cfg: ExperimentConfig, fitted: NominalModel, alpha: float, seed: int
) -> MomentSweep:
    grid = build_grid(fitted, cfg.grid_m, cfg.grid_span)
    moments = nominal_moments(
        fitted,
        cfg.dmm_d_max,
        cfg.moment_source,
        cfg.moment_samples,
        derive_seed(seed, _MOMENT_STREAM),
    )
    return moment_sweep(grid, moments, alpha, cfg.dmm_d_max)


def run_replication(
    cfg: ExperimentConfig, nu: float, alpha: float, rep_index: int
) -> ReplicationRecord:
    """Run one replication; a failing step is recorded, never raised."""
    seed = replication_seed(cfg, nu, alpha, rep_index)
    identity = {
        "rep_index": rep_index,
        "nu": float(nu),
        "alpha": float(alpha),
        "seed": seed,
    }
    try:
        truth, _, fitted = _refit(cfg, nu, seed)
        x_true = true_var(fitted.mu_hat, truth.s_nu, nu, alpha)

        sweep = _sweep(cfg, fitted, alpha, seed)
        if sweep.d_star == 0:
            raise DomainError("moment system infeasible at every order")
        bracket = sweep.brackets[sweep.d_star - 1]

        result = solve_var_bisection(
            fitted,
            alpha,
            n=cfg.n_mc,
            seed=derive_seed(seed, _IS_STREAM),
            tol=cfg.is_tol,
            max_iter=cfg.is_max_iter,
        )
    except TailVarError as exc:
        failure = f"{type(exc).__name__}: {exc}"
        logger.warning("replication_failed", **identity, failure=failure)
        return ReplicationRecord(**identity, failure=failure)

    grid_top = -fitted.mu_hat + cfg.grid_span * fitted.sigma_hat
    if bracket.upper >= grid_top:
        logger.warning("var_bound_at_grid_edge", **identity, upper=bracket.upper)

    return ReplicationRecord(
        **identity,
        mu_hat=fitted.mu_hat,
        sigma_hat=fitted.sigma_hat,
        true_var=x_true,
        is_var=result.var_estimate,
        is_bracket_lo=result.bracket_lo,
        is_bracket_hi=result.bracket_hi,
        is_iterations=result.iterations,
        ess=result.diagnostics.ess,
        max_weight_share=result.diagnostics.max_weight_share,
        dmm_lower=bracket.lower,
        dmm_upper=bracket.upper,
        dmm_midpoint=dmm_midpoint(bracket),
        dmm_width=bracket.width,
        dmm_order=bracket.moment_order,
    )


def _run_task(
    cfg: ExperimentConfig, task: tuple[float, float, int]
) -> ReplicationRecord:
    nu, alpha, rep_index = task
    return run_replication(cfg, nu, alpha, rep_index)


def run_replications(
    cfg: ExperimentConfig,
    workers: int = 1,
    *,
    verbose: bool = False,
    mp_context: BaseContext | None = None,
) -> list[ReplicationRecord]:
    """All replications of every cell, sorted by (nu, alpha, rep_index).

    Worker processes set up logging the same way as the command line
    (stderr, *verbose* for debug events), whatever the start method.
    """
    if workers < 1:
        raise DomainError(f"workers must be >= 1, got {workers!r}")
    tasks = [
        (nu, alpha, rep)
        for nu in cfg.nus
        for alpha in cfg.alphas
        for rep in range(cfg.m_reps)
    ]
    logger.info(
        "experiment_started",
        cells=len(cfg.nus) * len(cfg.alphas),
        replications=len(tasks),
        workers=workers,
    )
    if workers == 1:
        records = [_run_task(cfg, task) for task in tasks]
    else:
        records = []
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=workers,
            mp_context=mp_context,
            initializer=configure_logging,
            initargs=(verbose,),
        ) as executor:
            futures = [executor.submit(_run_task, cfg, task) for task in tasks]
            for future in concurrent.futures.as_completed(futures):
                records.append(future.result())
    records.sort(key=lambda r: r.sort_key)
    failed = sum(1 for r in records if not r.ok)
    logger.info("experiment_finished", replications=len(records), failed=failed)
    return records


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def _error_stats(
    estimates: np.ndarray, truths: np.ndarray
) -> tuple[float, float, float]:
    """(bias, variance with 1/(M-1), mse = bias**2 + variance)."""
    bias = float(np.mean(estimates - truths))
    variance = float(np.var(estimates, ddof=1))
    return bias, variance, bias**2 + variance


def summarize_cell(
    nu: float, alpha: float, records: Iterable[ReplicationRecord]
) -> CellSummary:
    records = sorted(records, key=lambda r: r.sort_key)
    ok = [r for r in records if r.ok]
    n_failed = len(records) - len(ok)
    if len(ok) < 2:
        return CellSummary(nu, alpha, len(ok), n_failed, insufficient=True)

    def column(name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in ok], dtype=float)

    truths = column("true_var")
    is_var = column("is_var")
    midpoints = column("dmm_midpoint")
    is_bias, is_variance, is_mse = _error_stats(is_var, truths)
    mid_bias, mid_variance, mid_mse = _error_stats(midpoints, truths)
    return CellSummary(
        nu=nu,
        alpha=alpha,
        n_success=len(ok),
        n_failed=n_failed,
        insufficient=False,
        true_var_mean=float(np.mean(truths)),
        is_mean=float(np.mean(is_var)),
        is_std=math.sqrt(is_variance),
        is_bias=is_bias,
        is_variance=is_variance,
        is_mse=is_mse,
        ess_mean=float(np.mean(column("ess"))),
        maxw_mean=float(np.mean(column("max_weight_share"))),
        dmm_lower_mean=float(np.mean(column("dmm_lower"))),
        dmm_upper_mean=float(np.mean(column("dmm_upper"))),
        dmm_width_mean=float(np.mean(column("dmm_width"))),
        dmm_mid_bias=mid_bias,
        dmm_mid_variance=mid_variance,
        dmm_mid_mse=mid_mse,
        dmm_order_mean=float(np.mean(column("dmm_order"))),
    )


def summarize(records: Iterable[ReplicationRecord]) -> SummaryTable:
    """Fold records into one CellSummary per (nu, alpha)."""
    cells: dict[tuple[float, float], list[ReplicationRecord]] = defaultdict(list)
    for record in records:
        cells[(record.nu, record.alpha)].append(record)
    return SummaryTable(
        tuple(summarize_cell(nu, alpha, recs) for (nu, alpha), recs in cells.items())
    )


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> SummaryTable:
    return summarize(run_replications(cfg, workers))


# ---------------------------------------------------------------------------
# Nominal baseline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaselineCheck:
    """Both estimators against the closed form when the nominal model is true."""

    closed_form: float
    is_result: ISVarResult
    bracket: VarBracket
    mc_var: float

    @property
    def is_error(self) -> float:
        return self.is_result.var_estimate - self.closed_form

    @property
    def bracket_contains_closed_form(self) -> bool:
        b = self.bracket
        return b.feasible and b.lower <= self.closed_form <= b.upper


def run_baseline(
    model: NominalModel,
    alpha: float,
    n: int = DEFAULT_N,
    seed: int = 0,
    *,
    d: int = 4,
    grid_m: int = 200,
    grid_span: float = 8.0,
    moment_source: MomentSource = MomentSource.ANALYTIC,
) -> BaselineCheck:
    moments = nominal_moments(
        model, d, moment_source, seed=derive_seed(seed, _MOMENT_STREAM)
    )
    return BaselineCheck(
        closed_form=gaussian_var(model, alpha),
        is_result=solve_var_bisection(model, alpha, n, derive_seed(seed, _IS_STREAM)),
        bracket=moment_bracket(build_grid(model, grid_m, grid_span), moments, alpha),
        mc_var=naive_mc_var(model, alpha, n, derive_seed(seed, _MC_STREAM)),
    )


# ---------------------------------------------------------------------------
# Figure data
# ---------------------------------------------------------------------------


def representative_record(
    records: Iterable[ReplicationRecord], cfg: ExperimentConfig
) -> ReplicationRecord | None:
    """First successful replication of (first nu, alpha closest to 0.99)."""
    nu = cfg.nus[0]
    alpha = min(cfg.alphas, key=lambda a: (abs(a - 0.99), a))
    candidates = sorted(
        (r for r in records if r.ok and r.nu == nu and r.alpha == alpha),
        key=lambda r: r.rep_index,
    )
    return candidates[0] if candidates else None


def _bracketing_frame(cfg: ExperimentConfig, record: ReplicationRecord) -> pd.DataFrame:
    _, returns, fitted = _refit(cfg, record.nu, record.seed)
    grid = build_grid(fitted, cfg.grid_m, cfg.grid_span)
    moments = nominal_moments(
        fitted,
        record.dmm_order,
        cfg.moment_source,
        cfg.moment_samples,
        derive_seed(record.seed, _MOMENT_STREAM),
    )
    envelope = cdf_envelope(grid, moments)
    losses = np.sort(returns.losses)
    empirical = np.searchsorted(losses, grid.points, side="right") / losses.size
    nominal = normal_cdf((grid.points + fitted.mu_hat) / fitted.sigma_hat)
    mc_seed = derive_seed(record.seed, _MC_STREAM)
    mc_var = naive_mc_var(fitted, record.alpha, cfg.n_mc, mc_seed)
    return pd.DataFrame(
        {
            "loss": grid.points,
            "empirical_cdf": empirical,
            "nominal_cdf": nominal,
            "cdf_lower": envelope.lower,
            "cdf_upper": envelope.upper,
            "var_lower": record.dmm_lower,
            "var_upper": record.dmm_upper,
            "true_var": record.true_var,
            "is_var": record.is_var,
            "mc_var": mc_var,
        }
    )


def _sensitivity_frame(
    cfg: ExperimentConfig, record: ReplicationRecord
) -> pd.DataFrame:
    _, _, fitted = _refit(cfg, record.nu, record.seed)
    sweep = _sweep(cfg, fitted, record.alpha, record.seed)
    return pd.DataFrame(
        {
            "order": [b.moment_order for b in sweep.brackets],
            "lower": [b.lower for b in sweep.brackets],
            "upper": [b.upper for b in sweep.brackets],
            "feasible": [b.feasible for b in sweep.brackets],
            "phase1_residual": [b.phase1_residual for b in sweep.brackets],
        }
    )


def emit_figure_data(
    table: SummaryTable, records: Iterable[ReplicationRecord], cfg: ExperimentConfig
) -> dict[str, pd.DataFrame]:
    """Columnar data behind each figure, keyed by ``FIGURE_NAMES``.

    The first two figures are recomputed for one representative
    replication from its stored seed; the rest are read off *table*.
    """
    if len(table) == 0:
        raise DomainError("cannot build figures from an empty summary")
    cells = [c for c in table if not c.insufficient]
    frames: dict[str, pd.DataFrame] = {}

    record = representative_record(records, cfg)
    if record is None:
        logger.warning("figure_representative_missing", nu=cfg.nus[0])
        frames[FIGURE_NAMES[0]] = pd.DataFrame(columns=list(BRACKETING_COLUMNS))
        frames[FIGURE_NAMES[1]] = pd.DataFrame(columns=list(SENSITIVITY_COLUMNS))
    else:
        frames[FIGURE_NAMES[0]] = _bracketing_frame(cfg, record)
        frames[FIGURE_NAMES[1]] = _sensitivity_frame(cfg, record)

    frames[FIGURE_NAMES[2]] = pd.DataFrame(
        {
            "nu": [c.nu for c in cells],
            "alpha": [c.alpha for c in cells],
            "true_var": [c.true_var_mean for c in cells],
            "is_mean": [c.is_mean for c in cells],
        }
    )
    frames[FIGURE_NAMES[3]] = pd.DataFrame(
        {
            "alpha": [c.alpha for c in cells],
            "nu": [c.nu for c in cells],
            "is_bias": [c.is_bias for c in cells],
        }
    ).sort_values(["alpha", "nu"], ignore_index=True)
    frames[FIGURE_NAMES[4]] = pd.DataFrame(
        {
            "alpha": [c.alpha for c in cells],
            "nu": [c.nu for c in cells],
            "is_std": [c.is_std for c in cells],
        }
    ).sort_values(["alpha", "nu"], ignore_index=True)
    frames[FIGURE_NAMES[5]] = pd.DataFrame(
        {
            "nu": [c.nu for c in cells],
            "alpha": [c.alpha for c in cells],
            "ess": [c.ess_mean for c in cells],
            "maxw": [c.maxw_mean for c in cells],
        }
    )
    frames[FIGURE_NAMES[6]] = pd.DataFrame(
        {
            "nu": [c.nu for c in cells],
            "alpha": [c.alpha for c in cells],
            "ess": [c.ess_mean for c in cells],
            "abs_bias": [abs(c.is_bias) for c in cells],
        }
    )
    return frames
