"""Tests for tailvar.dmm module.

Small grids are checked against hand-solved feasible sets; larger ones
against the closed-form Gaussian VaR and against each other.
"""

from __future__ import annotations

import functools

import numpy as np
import pytest
from scipy.optimize import linprog
from scipy.stats import norm

from tailvar import dmm
from tailvar.calibration import gaussian_var
from tailvar.dmm import (
    GridTransform,
    analytic_gaussian_moments,
    build_grid,
    cdf_envelope,
    dmm_midpoint,
    moment_bracket,
    moment_sweep,
    nominal_moments,
    raw_moments,
    standardize_moments,
    var_bounds,
)
from tailvar.errors import DomainError, GridTooShortError
from tailvar.lp_solver import ConstraintSystem, Sense
from tailvar.models import (
    CdfEnvelope,
    LossGrid,
    MomentSource,
    MomentVector,
    NominalModel,
    VarBracket,
)

THREE_POINTS = LossGrid(np.array([-1.0, 0.0, 1.0]))


def _random_models(count: int, seed: int) -> list[NominalModel]:
    rng = np.random.default_rng(seed)
    return [
        NominalModel(float(rng.uniform(-0.002, 0.002)), float(rng.uniform(0.005, 0.03)))
        for _ in range(count)
    ]


def _grid_gaussian(grid: LossGrid, model: NominalModel, d: int):
    """The nominal law restricted to the grid, with its own raw moments."""
    p = norm.pdf(grid.points, loc=-model.mu_hat, scale=model.sigma_hat)
    p = p / p.sum()
    moments = MomentVector(tuple(float(p @ grid.points**r) for r in range(1, d + 1)))
    return p, moments


def _first_reaching(cdf: np.ndarray, alpha: float) -> int:
    return int(np.flatnonzero(cdf >= alpha - dmm.LEVEL_TOL)[0])


class TestGridAndMoments:
    """Test grid construction and moment vectors."""

    def test_grid_layout(self, drifting_model):
        """m + 1 points centred on -mu_hat, span sigma_hat either side."""
        grid = build_grid(drifting_model, m=200, span=8.0)
        assert len(grid) == 201
        assert grid.points[100] == pytest.approx(-drifting_model.mu_hat)
        assert grid.points[-1] - grid.points[0] == pytest.approx(
            16.0 * drifting_model.sigma_hat
        )

    @pytest.mark.parametrize("m", [0, -3, 2.5])
    def test_grid_rejects_bad_size(self, unit_model, m):
        """m is a positive integer."""
        with pytest.raises(DomainError):
            build_grid(unit_model, m=m)

    def test_raw_moments(self):
        """mean(L**r) for r = 1..d."""
        moments = raw_moments(np.array([1.0, 2.0, 3.0]), 3)
        assert moments.values == pytest.approx((2.0, 14.0 / 3.0, 12.0))
        assert moments.source is MomentSource.SAMPLED

    def test_analytic_standard_normal(self):
        """Raw moments of N(0, 1): 0, 1, 0, 3, 0, 15."""
        moments = analytic_gaussian_moments(NominalModel(0.0, 1.0), 6)
        assert moments.values == pytest.approx((0.0, 1.0, 0.0, 3.0, 0.0, 15.0))

    def test_analytic_shifted(self):
        """L = -R has mean -mu and E[L**2] = mu**2 + sigma**2."""
        moments = analytic_gaussian_moments(NominalModel(0.5, 2.0), 3)
        # E[L**3] = m**3 + 3 m s**2 with m = -0.5, s = 2.
        assert moments.values == pytest.approx((-0.5, 4.25, -0.125 - 6.0))

    def test_sampled_close_to_analytic(self, drifting_model):
        """1e5 nominal draws reproduce the first four moments."""
        sampled = nominal_moments(drifting_model, 4, MomentSource.SAMPLED, 100_000, 1)
        exact = nominal_moments(drifting_model, 4, MomentSource.ANALYTIC)
        s = drifting_model.sigma_hat
        for r, (a, b) in enumerate(zip(sampled.values, exact.values), start=1):
            assert a == pytest.approx(b, abs=0.15 * s**r)

    def test_standardized_moments_match_transformed_sample(self):
        """The binomial transform equals moments of the mapped sample."""
        losses = np.random.default_rng(0).normal(0.001, 0.01, size=1_000)
        transform = GridTransform(centre=0.002, half_width=0.08)
        expected = [np.mean(transform.to_unit(losses) ** r) for r in range(6)]
        actual = standardize_moments(raw_moments(losses, 5), transform)
        np.testing.assert_allclose(actual, expected, rtol=1e-9, atol=1e-14)

    def test_transform_round_trip(self):
        """from_unit inverts to_unit and the grid maps onto [-1, 1]."""
        grid = LossGrid(np.linspace(-0.05, 0.07, 13))
        transform = GridTransform.from_grid(grid)
        y = transform.to_unit(grid.points)
        assert y[0] == pytest.approx(-1.0)
        assert y[-1] == pytest.approx(1.0)
        np.testing.assert_allclose(transform.from_unit(y), grid.points)


class TestEnvelope:
    """Test the CDF envelopes."""

    def test_three_point_mean_only(self):
        """Mean 0 on {-1, 0, 1}: p = (a, 1 - 2a, a) with a in [0, 1/2]."""
        envelope = cdf_envelope(THREE_POINTS, MomentVector((0.0,)))
        assert envelope.feasible
        np.testing.assert_allclose(envelope.lower, [0.0, 0.5, 1.0], atol=1e-12)
        np.testing.assert_allclose(envelope.upper, [0.5, 1.0, 1.0], atol=1e-12)

    def test_three_point_pinned(self):
        """Mean 0 and E[L**2] = 1/2 leave a single distribution."""
        envelope = cdf_envelope(THREE_POINTS, MomentVector((0.0, 0.5)))
        np.testing.assert_allclose(envelope.lower, [0.25, 0.75, 1.0], atol=1e-12)
        np.testing.assert_allclose(envelope.upper, envelope.lower, atol=1e-12)

    def test_infeasible_moments(self):
        """E[L**2] = 2 cannot be matched on {-1, 0, 1}."""
        envelope = cdf_envelope(THREE_POINTS, MomentVector((0.0, 2.0)))
        assert not envelope.feasible
        assert envelope.phase1_residual > 0
        assert np.all(np.isnan(envelope.lower))
        assert set(envelope.statuses) == {"infeasible"}

    def test_envelope_ordered_and_monotone(self, unit_model):
        """0 <= F- <= F+ <= 1, both non-decreasing, ending at 1."""
        grid = build_grid(unit_model, m=40)
        envelope = cdf_envelope(grid, analytic_gaussian_moments(unit_model, 4))
        assert np.all(envelope.lower <= envelope.upper + 1e-12)
        assert np.all(np.diff(envelope.lower) >= -1e-12)
        assert np.all(np.diff(envelope.upper) >= -1e-12)
        assert envelope.lower[-1] == pytest.approx(1.0)
        assert envelope.lower[0] >= 0.0

    @pytest.mark.parametrize("d", [2, 4, 6])
    def test_generating_law_inside_envelope(self, drifting_model, d):
        """The grid Gaussian whose moments are matched lies between F- and F+."""
        grid = build_grid(drifting_model, m=80)
        p, moments = _grid_gaussian(grid, drifting_model, d)
        envelope = cdf_envelope(grid, moments)
        cdf = np.cumsum(p)
        assert np.all(envelope.lower <= cdf + 1e-8)
        assert np.all(cdf <= envelope.upper + 1e-8)

    def test_mixtures_of_vertices_inside_bracket(self, drifting_model):
        """Any mixture of feasible vertex laws has its VaR inside the bracket."""
        grid = build_grid(drifting_model, m=60)
        _, moments = _grid_gaussian(grid, drifting_model, 4)
        envelope = cdf_envelope(grid, moments)
        bracket = var_bounds(envelope, 0.99)
        system = dmm._constraint_system(grid, moments)
        rng = np.random.default_rng(8)
        vertices = []
        for _ in range(6):
            outcome = system.optimize(rng.normal(size=len(grid)))
            assert outcome.optimal
            vertices.append(outcome.solution)
        for weights in rng.dirichlet(np.ones(len(vertices)), size=20):
            cdf = np.cumsum(weights @ np.array(vertices))
            assert np.all(envelope.lower <= cdf + 1e-8)
            assert np.all(cdf <= envelope.upper + 1e-8)
            var = grid.points[_first_reaching(cdf, 0.99)]
            assert bracket.lower <= var <= bracket.upper


class TestBrackets:
    """Test VaR brackets."""

    def test_three_point_bracket(self):
        """At alpha = 0.6 the mean-only bracket is [0, 1]."""
        envelope = cdf_envelope(THREE_POINTS, MomentVector((0.0,)))
        bracket = var_bounds(envelope, 0.6)
        assert (bracket.lower, bracket.upper) == (0.0, 1.0)
        assert dmm_midpoint(bracket) == 0.5

    def test_infeasible_bracket(self):
        """An infeasible envelope gives a flagged bracket, not an error."""
        bracket = moment_bracket(THREE_POINTS, MomentVector((0.0, 2.0)), 0.9)
        assert not bracket.feasible
        with pytest.raises(DomainError):
            dmm_midpoint(bracket)

    def test_grid_too_short(self):
        """A partial envelope that never reaches alpha raises."""
        envelope = CdfEnvelope(
            thresholds=np.array([0.0, 1.0]),
            lower=np.array([0.1, 0.5]),
            upper=np.array([0.2, 0.9]),
            statuses=("optimal", "optimal"),
            moment_order=1,
            feasible=True,
        )
        with pytest.raises(GridTooShortError) as info:
            var_bounds(envelope, 0.95)
        assert info.value.alpha == 0.95

    @pytest.mark.parametrize("d", [1, 2, 3, 4])
    @pytest.mark.parametrize("alpha", [0.9, 0.99, 0.995])
    def test_binary_search_matches_full_envelope(self, drifting_model, d, alpha):
        """moment_bracket == var_bounds(cdf_envelope(...))."""
        grid = build_grid(drifting_model, m=60)
        moments = analytic_gaussian_moments(drifting_model, d)
        full = var_bounds(cdf_envelope(grid, moments), alpha)
        fast = moment_bracket(grid, moments, alpha)
        assert (fast.lower, fast.upper) == (full.lower, full.upper)

    def _check_nesting_and_containment(self, models, d_max=6):
        for model in models:
            grid = build_grid(model)
            spacing = grid.points[1] - grid.points[0]
            x0 = gaussian_var(model, 0.99)
            moments = analytic_gaussian_moments(model, d_max)
            previous = None
            for d in range(1, d_max + 1):
                bracket = moment_bracket(grid, moments.prefix(d), 0.99)
                assert bracket.feasible
                assert bracket.lower - spacing <= x0 <= bracket.upper + spacing
                if previous is not None:
                    assert bracket.lower >= previous.lower
                    assert bracket.upper <= previous.upper
                previous = bracket

    def test_nested_and_containing(self):
        """Brackets shrink with d and hold the closed-form VaR."""
        self._check_nesting_and_containment(_random_models(5, seed=1))

    @pytest.mark.slow
    def test_nested_and_containing_many_models(self):
        """The same over 50 random Gaussian models."""
        self._check_nesting_and_containment(_random_models(50, seed=2))

    def test_first_order_bracket_is_wide(self, unit_model):
        """The mean alone gives a bracket much wider than the fourth-order one."""
        grid = build_grid(unit_model)
        moments = analytic_gaussian_moments(unit_model, 4)
        wide = moment_bracket(grid, moments.prefix(1), 0.99)
        narrow = moment_bracket(grid, moments, 0.99)
        assert wide.width > narrow.width

    @pytest.mark.parametrize("d", [2, 4])
    def test_refined_grid_keeps_coarse_bracket(self, drifting_model, d):
        """Doubling m keeps the coarse bracket inside, up to one coarse spacing."""
        coarse = build_grid(drifting_model, m=50)
        fine = build_grid(drifting_model, m=100)
        spacing = coarse.points[1] - coarse.points[0]
        moments = analytic_gaussian_moments(drifting_model, d)
        wide = moment_bracket(coarse, moments, 0.99)
        refined = moment_bracket(fine, moments, 0.99)
        assert refined.lower <= wide.lower + 1e-12
        assert refined.upper >= wide.upper - spacing


class TestSolverAgreement:
    """Test moment programs from the default grid against scipy's HiGHS solver."""

    # Refit model with a numerically hard fifth-order program.
    DRIFTED = NominalModel(-0.000753, 0.015583)

    @pytest.mark.parametrize("j", [80, 100, 115, 130, 150])
    def test_fifth_order_envelope_matches_linprog(self, j):
        """F- and F+ at grid index j agree with linprog."""
        grid = build_grid(self.DRIFTED)
        transform = GridTransform.from_grid(grid)
        a = np.vander(transform.to_unit(grid.points), 6, increasing=True).T
        b = standardize_moments(analytic_gaussian_moments(self.DRIFTED, 5), transform)
        system = ConstraintSystem(a, b)
        assert system.feasible
        assert system.phase1_residual <= 1e-8
        c = np.zeros(len(grid))
        c[: j + 1] = 1.0
        for sense, sign in ((Sense.MINIMIZE, 1.0), (Sense.MAXIMIZE, -1.0)):
            ours = system.optimize(c, sense)
            ref = linprog(sign * c, A_eq=a, b_eq=b, bounds=(0, None), method="highs")
            assert ours.optimal and ref.status == 0
            assert ours.value == pytest.approx(sign * ref.fun, abs=1e-6)
            assert np.max(np.abs(a @ ours.solution - b)) <= 1e-7

    @pytest.mark.parametrize("alpha", [0.99, 0.995])
    def test_fifth_order_bracket_holds_gaussian_var(self, alpha):
        """The bracket is feasible and contains the closed-form VaR."""
        grid = build_grid(self.DRIFTED)
        spacing = grid.points[1] - grid.points[0]
        moments = analytic_gaussian_moments(self.DRIFTED, 5)
        bracket = moment_bracket(grid, moments, alpha)
        x0 = gaussian_var(self.DRIFTED, alpha)
        assert bracket.feasible
        assert bracket.lower - spacing <= x0 <= bracket.upper + spacing


class TestMomentSweep:
    """Test the sweep over moment orders."""

    def test_frontier_on_coarse_grid(self, unit_model):
        """Gaussian moments stop fitting on a 5-point grid at d = 4."""
        grid = build_grid(unit_model, m=4)
        sweep = moment_sweep(grid, analytic_gaussian_moments(unit_model, 6), 0.99, 6)
        assert sweep.d_star == 3
        assert sweep.failed_order == 4
        assert sweep.frontier_reached
        assert sweep.failed_residual > 0
        assert len(sweep.brackets) == 4
        assert len(sweep.feasible_brackets) == 3
        assert not sweep.brackets[-1].feasible

    def test_sampled_sweep_shape(self, drifting_model):
        """Lower bounds rise and upper bounds fall with d up to the frontier."""
        grid = build_grid(drifting_model)
        moments = nominal_moments(drifting_model, 7, MomentSource.SAMPLED, 100_000, 5)
        sweep = moment_sweep(grid, moments, 0.99, 7)
        feasible = sweep.feasible_brackets
        assert sweep.d_star == len(feasible) >= 2
        lowers = [b.lower for b in feasible]
        uppers = [b.upper for b in feasible]
        assert lowers == sorted(lowers)
        assert uppers == sorted(uppers, reverse=True)

    def test_every_order_feasible(self, unit_model):
        """Without a failure d_star is d_max and no frontier is reported."""
        grid = build_grid(unit_model)
        sweep = moment_sweep(grid, analytic_gaussian_moments(unit_model, 2), 0.99, 2)
        assert sweep.d_star == 2
        assert not sweep.frontier_reached
        assert all(isinstance(b, VarBracket) for b in sweep.brackets)

    def test_d_max_bounded_by_moments(self, unit_model):
        """d_max cannot exceed the moments supplied."""
        grid = build_grid(unit_model, m=20)
        with pytest.raises(DomainError):
            moment_sweep(grid, analytic_gaussian_moments(unit_model, 2), 0.99, 3)

    def test_two_point_sample_reaches_frontier_on_default_grid(self, unit_model):
        """Two off-grid losses fix every law of order >= 4; the grid cannot match."""
        grid = build_grid(unit_model)
        spacing = grid.points[1] - grid.points[0]
        losses = np.array([grid.points[90], grid.points[115]]) + 0.5 * spacing
        sweep = moment_sweep(grid, raw_moments(losses, 6), 0.99, 6)
        assert sweep.frontier_reached
        assert 1 <= sweep.d_star <= 3
        assert sweep.failed_order == sweep.d_star + 1
        assert sweep.failed_status == "infeasible"
        assert sweep.failed_residual > 1e-8
        assert all(b.feasible for b in sweep.brackets[:-1])

    def test_solver_failure_recorded_as_frontier(self, unit_model, monkeypatch):
        """A phase 1 that runs out of pivots ends the sweep instead of raising."""
        starved = functools.partial(ConstraintSystem, max_pivots=0)
        monkeypatch.setattr(dmm, "ConstraintSystem", starved)
        grid = build_grid(unit_model, m=20)
        sweep = moment_sweep(grid, analytic_gaussian_moments(unit_model, 3), 0.99, 3)
        assert sweep.d_star == 0
        assert sweep.failed_order == 1
        assert sweep.failed_status == "numerical-failure"
        assert len(sweep.brackets) == 1
        assert not sweep.brackets[0].feasible
