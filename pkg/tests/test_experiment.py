"""Tests for tailvar.experiment module.

Fast tests run the small_config study; the default-size study that checks
the sign and ordering of the misspecification bias is marked slow.
"""

from __future__ import annotations

import json
import math
import multiprocessing

import numpy as np
import pytest
import structlog

from tailvar import experiment
from tailvar.config import ExperimentConfig
from tailvar.errors import BracketingError
from tailvar.experiment import (
    BRACKETING_COLUMNS,
    FIGURE_NAMES,
    SENSITIVITY_COLUMNS,
    emit_figure_data,
    replication_seed,
    representative_record,
    run_baseline,
    run_replication,
    run_replications,
    summarize,
    summarize_cell,
)
from tailvar.logging import configure as configure_logging
from tailvar.models import MomentSource, NominalModel, ReplicationRecord


def _record(rep: int, is_var: float, true_var: float, **fields) -> ReplicationRecord:
    values = {
        "mu_hat": 0.0,
        "sigma_hat": 0.01,
        "true_var": true_var,
        "is_var": is_var,
        "is_bracket_lo": is_var,
        "is_bracket_hi": is_var,
        "is_iterations": 20,
        "ess": 100.0,
        "max_weight_share": 0.01,
        "dmm_lower": true_var - 0.001,
        "dmm_upper": true_var + 0.003,
        "dmm_midpoint": true_var + 0.001,
        "dmm_width": 0.004,
        "dmm_order": 7,
    }
    values.update(fields)
    return ReplicationRecord(rep, 5.0, 0.99, rep, **values)


class TestSeeds:
    """Test replication substreams."""

    def test_cells_get_distinct_streams(self, small_config):
        """By default nu and alpha enter the seed."""
        seeds = {
            replication_seed(small_config, nu, alpha, 0)
            for nu in small_config.nus
            for alpha in small_config.alphas
        }
        assert len(seeds) == 4

    def test_common_streams_share_seeds(self, small_config):
        """With common_streams the seed only depends on the replication index."""
        cfg = small_config.replace(common_streams=True)
        assert replication_seed(cfg, 5.0, 0.99, 2) == replication_seed(
            cfg, 10.0, 0.995, 2
        )
        assert replication_seed(cfg, 5.0, 0.99, 2) != replication_seed(
            cfg, 5.0, 0.99, 3
        )

    def test_integer_and_float_nu_agree(self, small_config):
        """nu = 5 and nu = 5.0 address the same stream."""
        assert replication_seed(small_config, 5, 0.99, 0) == replication_seed(
            small_config, 5.0, 0.99, 0
        )


class TestRunReplication:
    """Test one replication."""

    def test_successful_record(self, small_config):
        """Every estimate is filled in and internally consistent."""
        record = run_replication(small_config, 5.0, 0.99, 0)
        assert record.ok
        assert record.seed == replication_seed(small_config, 5.0, 0.99, 0)
        assert record.is_bracket_lo <= record.is_var <= record.is_bracket_hi
        assert record.dmm_lower <= record.dmm_midpoint <= record.dmm_upper
        assert record.dmm_width == pytest.approx(record.dmm_upper - record.dmm_lower)
        assert 1 <= record.dmm_order <= small_config.dmm_d_max
        assert 1.0 <= record.ess <= small_config.n_mc
        assert record.true_var > 0

    def test_deterministic(self, small_config):
        """A record is a pure function of (cfg, nu, alpha, rep_index)."""
        assert run_replication(small_config, 10.0, 0.995, 1) == run_replication(
            small_config, 10.0, 0.995, 1
        )

    def test_failure_is_recorded(self, small_config, monkeypatch):
        """A failing estimator leaves a tagged record instead of raising."""

        def fail(*args, **kwargs):
            raise BracketingError("no sign change", 0.0, 1.0)

        monkeypatch.setattr(experiment, "solve_var_bisection", fail)
        record = run_replication(small_config, 5.0, 0.99, 0)
        assert not record.ok
        assert record.failure.startswith("BracketingError")
        assert math.isnan(record.is_var)
        assert record.rep_index == 0


class TestRunReplications:
    """Test the replication loop."""

    def test_sorted_and_complete(self, small_config):
        """One record per (nu, alpha, rep), sorted by that key."""
        records = run_replications(small_config)
        assert len(records) == 2 * 2 * small_config.m_reps
        keys = [r.sort_key for r in records]
        assert keys == sorted(keys)

    @pytest.mark.integration
    def test_worker_count_does_not_change_records(self, small_config):
        """Process-pool runs give the same records as the serial loop."""
        cfg = small_config.replace(m_reps=2)
        assert run_replications(cfg, workers=1) == run_replications(cfg, workers=2)

    def test_rejects_zero_workers(self, small_config):
        """workers >= 1."""
        with pytest.raises(ValueError):
            run_replications(small_config, workers=0)


class TestWorkerLogging:
    """Test logging from pool workers started with spawn."""

    @pytest.fixture
    def noisy_config(self, small_config):
        # A 5-point grid cannot match four moments, so every replication logs.
        return small_config.replace(
            nus=(5.0,),
            alphas=(0.99,),
            m_reps=2,
            grid_m=4,
            dmm_d_max=6,
            moment_source=MomentSource.ANALYTIC,
        )

    @pytest.fixture(autouse=True)
    def _reset_structlog(self):
        yield
        structlog.reset_defaults()

    @staticmethod
    def _events(err: str) -> list[str]:
        lines = (line for line in err.splitlines() if line.startswith("{"))
        return [json.loads(line)["event"] for line in lines]

    @pytest.mark.integration
    def test_spawned_workers_log_to_stderr(self, noisy_config, capfd):
        """stdout stays empty; worker events arrive on stderr as JSON lines."""
        configure_logging()
        spawn = multiprocessing.get_context("spawn")
        run_replications(noisy_config, workers=2, mp_context=spawn)
        captured = capfd.readouterr()
        assert captured.out == ""
        events = self._events(captured.err)
        assert events.count("moment_order_infeasible") == 2
        assert "bisection_converged" not in events

    @pytest.mark.integration
    def test_verbose_reaches_workers(self, noisy_config, capfd):
        """Debug events from workers appear only when verbose is passed."""
        configure_logging()
        spawn = multiprocessing.get_context("spawn")
        run_replications(noisy_config, workers=2, verbose=True, mp_context=spawn)
        captured = capfd.readouterr()
        assert captured.out == ""
        assert self._events(captured.err).count("bisection_converged") == 2


class TestSummaries:
    """Test per-cell aggregation."""

    def test_error_statistics(self):
        """bias, 1/(M-1) variance and mse = bias**2 + variance."""
        records = [_record(i, v, 0.03) for i, v in enumerate((0.025, 0.027, 0.026))]
        cell = summarize_cell(5.0, 0.99, records)
        assert cell.is_bias == pytest.approx(-0.004)
        assert cell.is_variance == pytest.approx(1e-6)
        assert cell.is_mse == pytest.approx(0.004**2 + 1e-6)
        assert cell.is_std == pytest.approx(1e-3)
        assert cell.dmm_mid_bias == pytest.approx(0.001)
        assert cell.dmm_order_mean == 7.0
        assert (cell.n_success, cell.n_failed) == (3, 0)

    def test_failures_excluded_and_counted(self):
        """Failed records do not enter the statistics."""
        records = [
            _record(0, 0.025, 0.03),
            _record(1, 0.027, 0.03),
            ReplicationRecord(2, 5.0, 0.99, 2, failure="ConvergenceError: x"),
        ]
        cell = summarize_cell(5.0, 0.99, records)
        assert (cell.n_success, cell.n_failed) == (2, 1)
        assert cell.is_mean == pytest.approx(0.026)

    def test_single_success_is_insufficient(self):
        """Fewer than two successes leaves the statistics undefined."""
        cell = summarize_cell(5.0, 0.99, [_record(0, 0.025, 0.03)])
        assert cell.insufficient
        assert math.isnan(cell.is_bias)

    def test_summarize_groups_cells(self, small_config):
        """One cell per (nu, alpha), sorted."""
        table = summarize(run_replications(small_config))
        assert len(table) == 4
        assert table.nus == (5.0, 10.0)
        assert table.alphas == (0.99, 0.995)

    def test_small_study_shows_negative_bias_at_low_nu(self, small_config):
        """The Gaussian estimator understates the t VaR at nu = 5."""
        table = summarize(run_replications(small_config))
        for alpha in small_config.alphas:
            assert table.cell(5.0, alpha).is_bias < 0


class TestBaseline:
    """Test both estimators when the nominal model is the truth."""

    def test_is_reproduces_closed_form(self, unit_model):
        """IS VaR within 1e-4 of 0.0232635; MC reference close as well."""
        check = run_baseline(unit_model, 0.99, n=100_000, seed=1)
        assert check.closed_form == pytest.approx(0.0232635, abs=1e-7)
        assert abs(check.is_error) < 1e-4
        assert check.mc_var == pytest.approx(check.closed_form, abs=1e-3)

    def test_bracket_holds_closed_form(self, drifting_model):
        """The fourth-order bracket contains x0 up to one grid spacing."""
        check = run_baseline(drifting_model, 0.995, n=20_000, seed=2)
        spacing = 16.0 * drifting_model.sigma_hat / 200
        assert check.bracket.feasible
        assert check.bracket.lower - spacing <= check.closed_form
        assert check.closed_form <= check.bracket.upper + spacing


class TestFigureData:
    """Test the figure bundle."""

    def test_bundle(self, small_config):
        """Every figure is present with the documented columns."""
        records = run_replications(small_config)
        frames = emit_figure_data(summarize(records), records, small_config)
        assert set(frames) == set(FIGURE_NAMES)
        bracketing = frames["figure_1_bracketing"]
        assert tuple(bracketing.columns) == BRACKETING_COLUMNS
        assert len(bracketing) == small_config.grid_m + 1
        assert np.all(bracketing["cdf_lower"] <= bracketing["cdf_upper"] + 1e-12)
        sensitivity = frames["figure_2_moment_sensitivity"]
        assert tuple(sensitivity.columns) == SENSITIVITY_COLUMNS
        assert list(sensitivity["order"]) == list(range(1, len(sensitivity) + 1))
        assert len(frames["figure_4_bias_vs_nu"]) == 4

    def test_representative_record(self, small_config):
        """First nu, alpha nearest 0.99, lowest successful rep."""
        records = run_replications(small_config.replace(m_reps=2))
        rep = representative_record(records, small_config)
        assert (rep.nu, rep.alpha, rep.rep_index) == (5.0, 0.99, 0)

    def test_bracketing_matches_record(self, small_config):
        """Figure 1 is rebuilt from the stored seed: its bounds match the record."""
        records = run_replications(small_config.replace(m_reps=1))
        frames = emit_figure_data(summarize(records), records, small_config)
        rep = representative_record(records, small_config)
        bracketing = frames["figure_1_bracketing"]
        assert bracketing["var_lower"].iloc[0] == rep.dmm_lower
        assert bracketing["is_var"].iloc[0] == rep.is_var


@pytest.mark.slow
class TestMisspecificationStudy:
    """The default-size study: sign and ordering of the bias."""

    @pytest.fixture(scope="class")
    def table(self):
        return summarize(run_replications(ExperimentConfig(), workers=4))

    def test_bias_negative_everywhere(self, table):
        """The Gaussian estimator understates the t VaR in every cell."""
        assert all(cell.is_bias < 0 for cell in table)

    def test_bias_shrinks_with_nu(self, table):
        """|bias| decreases as the tails lighten."""
        for alpha in table.alphas:
            biases = [abs(table.cell(nu, alpha).is_bias) for nu in table.nus]
            assert biases == sorted(biases, reverse=True)

    def test_bias_grows_with_alpha(self, table):
        """|bias| increases further into the tail."""
        for nu in table.nus:
            low, high = (abs(table.cell(nu, a).is_bias) for a in table.alphas)
            assert high > low

    def test_diagnostics_degrade_with_alpha(self, table):
        """ESS falls and maxW rises from 0.99 to 0.995."""
        for nu in table.nus:
            low, high = (table.cell(nu, a) for a in table.alphas)
            assert high.ess_mean < low.ess_mean
            assert high.maxw_mean > low.maxw_mean
