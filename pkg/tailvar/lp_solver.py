"""Revised two-phase simplex for small equality-constrained linear programs.

This module is isolated: apart from the error types it imports nothing from
the rest of tailvar.  Problems have the standard form

    minimize / maximize   c . x
    subject to            A x = b,   x >= 0

with at most a few hundred variables and a handful of rows.  Every
iteration solves the current basis afresh from the equilibrated rows
(``B x_B = b``, ``B^T y = c_B``), so round-off does not build up across
pivots the way it does in an updated tableau.  Pivoting follows Bland's
rule (lowest-index entering column, lowest-index leaving basic variable
among ratio ties), which rules out cycling; a pivot budget turns any
remaining pathology into ``NUMERICAL_FAILURE``.

Public API
----------
    LinearProgram, Sense, LPStatus, LPOutcome
    solve(lp) -> LPOutcome
    ConstraintSystem(eq_matrix, eq_rhs).optimize(objective, sense) -> LPOutcome
    solve_many(eq_matrix, eq_rhs, objectives, senses) -> list[LPOutcome]

``solve_many`` runs phase 1 once for a shared constraint system and starts
every phase 2 from the resulting basis.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np

from tailvar.errors import DomainError

# Phase-1 residual above this declares the system infeasible.  The residual
# is sum |A x - b| at the phase-1 basis, recomputed from the equilibrated
# rows (each row divided by its largest coefficient).
FEASIBILITY_TOL = 1e-8
# Max |A x - b| allowed at a reported optimum (original, unscaled rows).
RESIDUAL_TOL = 1e-7
# Most negative solution component still accepted as zero.
NONNEGATIVITY_TOL = 1e-9

# Pivot and ratio tolerances are relative to the largest entry of the
# entering column; the optimality tolerance to the largest cost.
_PIVOT_TOL = 1e-9
_OPTIMALITY_TOL = 1e-10
_RATIO_TOL = 1e-12


class Sense(Enum):
    MINIMIZE = "min"
    MAXIMIZE = "max"


class LPStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical-failure"


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """``objective . x`` over ``{x >= 0 : eq_matrix @ x = eq_rhs}``."""

    objective: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    sense: Sense = Sense.MINIMIZE

    def __post_init__(self) -> None:
        matrix, rhs = _check_system(self.eq_matrix, self.eq_rhs)
        objective = _check_objective(self.objective, matrix.shape[1])
        object.__setattr__(self, "eq_matrix", matrix)
        object.__setattr__(self, "eq_rhs", rhs)
        object.__setattr__(self, "objective", objective)

    @property
    def n_vars(self) -> int:
        return int(self.eq_matrix.shape[1])

    @property
    def n_cons(self) -> int:
        return int(self.eq_matrix.shape[0])


@dataclass(frozen=True, eq=False)
class LPOutcome:
    """Solver verdict.  *value* and *solution* are only set when optimal."""

    status: LPStatus
    value: float = float("nan")
    solution: np.ndarray | None = None
    certificate_norm: float = float("nan")
    phase1_residual: float = 0.0
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is LPStatus.OPTIMAL


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


class ConstraintSystem:
    """Phase 1 for ``{x >= 0 : eq_matrix @ x = eq_rhs}``, reusable across objectives.

    Construction decides feasibility.  ``optimize`` then runs phase 2 from
    the phase-1 basis, so results do not depend on the order in which
    objectives are requested.
    """

    def __init__(self, eq_matrix, eq_rhs, *, max_pivots: int | None = None) -> None:
        self.matrix, self.rhs = _check_system(eq_matrix, eq_rhs)
        n_cons, n_vars = self.matrix.shape
        self.budget = (
            max_pivots if max_pivots is not None else 50 * (n_cons + n_vars) + 100
        )
        scaled, scaled_rhs = _equilibrate(self.matrix, self.rhs)
        self._start = _phase_one(scaled, scaled_rhs, self.budget)

    @property
    def status(self) -> LPStatus:
        return self._start.status

    @property
    def feasible(self) -> bool:
        return self._start.status is LPStatus.OPTIMAL

    @property
    def phase1_residual(self) -> float:
        return self._start.residual

    def optimize(self, objective, sense: Sense = Sense.MINIMIZE) -> LPOutcome:
        cost = _check_objective(objective, self.matrix.shape[1])
        start = self._start
        if not self.feasible:
            return LPOutcome(
                start.status, phase1_residual=start.residual, pivots=start.pivots
            )
        basis = list(start.basis)
        signed = cost if sense is Sense.MINIMIZE else -cost
        status, pivots = _simplex(start.matrix, start.rhs, basis, signed, self.budget)
        pivots += start.pivots
        if status is not LPStatus.OPTIMAL:
            return LPOutcome(status, phase1_residual=start.residual, pivots=pivots)
        return _finish(self, cost, basis, pivots)


def solve(lp: LinearProgram) -> LPOutcome:
    return ConstraintSystem(lp.eq_matrix, lp.eq_rhs).optimize(lp.objective, lp.sense)


def solve_many(
    eq_matrix,
    eq_rhs,
    objectives: Sequence[Sequence[float]] | np.ndarray,
    senses: Sequence[Sense] | Sense = Sense.MINIMIZE,
    *,
    max_pivots: int | None = None,
) -> list[LPOutcome]:
    """Optimize each objective over one shared constraint system.

    Feasibility is decided once; an infeasible system yields an
    ``INFEASIBLE`` outcome for every objective, each carrying the phase-1
    residual.
    """
    system = ConstraintSystem(eq_matrix, eq_rhs, max_pivots=max_pivots)
    objectives = list(objectives)
    if isinstance(senses, Sense):
        senses = [senses] * len(objectives)
    if len(senses) != len(objectives):
        raise DomainError("one sense per objective is required")
    return [system.optimize(obj, sense) for obj, sense in zip(objectives, senses)]


# ---------------------------------------------------------------------------
# Phases
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Start:
    """Phase-1 result: the kept equilibrated rows and a basis over them."""

    status: LPStatus
    matrix: np.ndarray
    rhs: np.ndarray
    basis: tuple[int, ...]
    residual: float
    pivots: int


def _equilibrate(matrix: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Divide each row by its largest coefficient and make the rhs non-negative."""
    scale = np.max(np.abs(matrix), axis=1)
    scale[scale == 0] = 1.0
    scale[rhs < 0] *= -1.0
    return matrix / scale[:, None], rhs / scale


def _basic_solution(
    matrix: np.ndarray, rhs: np.ndarray, basis: Sequence[int]
) -> np.ndarray | None:
    """Levels of the basic variables, or None for a singular basis."""
    try:
        levels = np.linalg.solve(matrix[:, list(basis)], rhs)
    except np.linalg.LinAlgError:
        return None
    return levels if np.all(np.isfinite(levels)) else None


def _residual(
    a: np.ndarray, b: np.ndarray, full: np.ndarray, basis: Sequence[int]
) -> float:
    """``sum |a x - b|`` for the original-column part of the basic solution."""
    n_vars = a.shape[1]
    levels = _basic_solution(full, b, basis)
    if levels is None:
        return float("nan")
    x = np.zeros(n_vars)
    for j, level in zip(basis, levels):
        if j < n_vars:
            x[j] = max(level, 0.0)
    return float(np.sum(np.abs(a @ x - b)))


def _phase_one(a: np.ndarray, b: np.ndarray, budget: int) -> _Start:
    """Find a feasible basis over the original columns, or prove there is none.

    The verdict rests on the residual recomputed from the equilibrated rows
    at the final basis, not on the objective the simplex carried along.
    """
    n_cons, n_vars = a.shape
    full = np.hstack((a, np.eye(n_cons)))
    basis = list(range(n_vars, n_vars + n_cons))
    cost = np.concatenate((np.zeros(n_vars), np.ones(n_cons)))

    status, pivots = _simplex(full, b, basis, cost, budget)
    residual = _residual(a, b, full, basis)
    if status is not LPStatus.OPTIMAL or np.isnan(residual):
        return _Start(LPStatus.NUMERICAL_FAILURE, a, b, tuple(basis), residual, pivots)
    if residual > FEASIBILITY_TOL:
        return _Start(LPStatus.INFEASIBLE, a, b, tuple(basis), residual, pivots)

    # Swap zero-level artificials for original columns; a row with no usable
    # column is a combination of the others and is dropped with its artificial.
    rows = list(range(n_cons))
    while True:
        slots = [i for i, j in enumerate(basis) if j >= n_vars]
        if not slots:
            break
        slot = slots[0]
        unit = np.zeros(len(rows))
        unit[slot] = 1.0
        try:
            weights = np.linalg.solve(full[np.ix_(rows, basis)].T, unit)
        except np.linalg.LinAlgError:
            return _Start(
                LPStatus.NUMERICAL_FAILURE, a, b, tuple(basis), residual, pivots
            )
        tableau_row = weights @ a[rows]
        tableau_row[[j for j in basis if j < n_vars]] = 0.0
        col = int(np.argmax(np.abs(tableau_row)))
        floor = _PIVOT_TOL * max(1.0, float(np.max(np.abs(weights))))
        if abs(tableau_row[col]) > floor:
            basis[slot] = col
            pivots += 1
        else:
            del rows[rows.index(basis[slot] - n_vars)]
            del basis[slot]
    return _Start(LPStatus.OPTIMAL, a[rows], b[rows], tuple(basis), residual, pivots)


def _simplex(
    matrix: np.ndarray,
    rhs: np.ndarray,
    basis: list[int],
    cost: np.ndarray,
    budget: int,
) -> tuple[LPStatus, int]:
    """Revised primal simplex with Bland's rule.  Returns (status, pivots).

    *basis* is updated in place.  The basis is refactored from *matrix*
    on every iteration.
    """
    tol = _OPTIMALITY_TOL * max(1.0, float(np.max(np.abs(cost), initial=0.0)))
    pivots = 0
    while True:
        factor = matrix[:, basis]
        try:
            levels = np.linalg.solve(factor, rhs)
            duals = np.linalg.solve(factor.T, cost[basis])
        except np.linalg.LinAlgError:
            return LPStatus.NUMERICAL_FAILURE, pivots
        reduced = cost - duals @ matrix
        reduced[basis] = 0.0
        candidates = np.flatnonzero(reduced < -tol)
        if candidates.size == 0:
            return LPStatus.OPTIMAL, pivots
        if pivots >= budget:
            return LPStatus.NUMERICAL_FAILURE, pivots
        col = int(candidates[0])
        direction = np.linalg.solve(factor, matrix[:, col])
        floor = _PIVOT_TOL * max(1.0, float(np.max(np.abs(direction))))
        eligible = np.flatnonzero(direction > floor)
        if eligible.size == 0:
            return LPStatus.UNBOUNDED, pivots
        ratios = np.maximum(levels[eligible], 0.0) / direction[eligible]
        best = float(np.min(ratios))
        ties = eligible[ratios <= best + _RATIO_TOL * max(1.0, best)]
        row = int(min(ties, key=lambda i: basis[i]))
        basis[row] = col
        pivots += 1


def _finish(
    system: ConstraintSystem, cost: np.ndarray, basis: list[int], pivots: int
) -> LPOutcome:
    start = system._start
    failure = LPOutcome(
        LPStatus.NUMERICAL_FAILURE, phase1_residual=start.residual, pivots=pivots
    )
    levels = _basic_solution(start.matrix, start.rhs, basis)
    if levels is None:
        return failure
    x = np.zeros(system.matrix.shape[1])
    x[basis] = levels
    if np.any(x < -NONNEGATIVITY_TOL):
        return failure
    x = np.maximum(x, 0.0)
    certificate = float(np.max(np.abs(system.matrix @ x - system.rhs), initial=0.0))
    if certificate > RESIDUAL_TOL:
        return LPOutcome(
            LPStatus.NUMERICAL_FAILURE,
            certificate_norm=certificate,
            phase1_residual=start.residual,
            pivots=pivots,
        )
    return LPOutcome(
        LPStatus.OPTIMAL,
        value=float(cost @ x),
        solution=x,
        certificate_norm=certificate,
        phase1_residual=start.residual,
        pivots=pivots,
    )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _check_system(eq_matrix, eq_rhs) -> tuple[np.ndarray, np.ndarray]:
    matrix = np.array(eq_matrix, dtype=float, ndmin=2)
    rhs = np.array(eq_rhs, dtype=float, ndmin=1)
    if matrix.ndim != 2 or rhs.ndim != 1:
        raise DomainError("eq_matrix must be 2-D and eq_rhs 1-D")
    n_cons, n_vars = matrix.shape
    if rhs.shape[0] != n_cons:
        raise DomainError(f"eq_rhs has {rhs.shape[0]} entries for {n_cons} rows")
    if n_vars == 0 or n_cons == 0 or n_cons > n_vars:
        raise DomainError(f"need 1 <= n_cons <= n_vars, got {n_cons} x {n_vars}")
    if not (np.all(np.isfinite(matrix)) and np.all(np.isfinite(rhs))):
        raise DomainError("constraint entries must be finite")
    return matrix, rhs


def _check_objective(objective, n_vars: int) -> np.ndarray:
    cost = np.array(objective, dtype=float, ndmin=1)
    if cost.shape != (n_vars,):
        raise DomainError(f"objective needs {n_vars} coefficients, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise DomainError("objective entries must be finite")
    return cost
