"""Quadratic-penalty and augmented-Lagrangian budget handling.

Both baselines share the optimizer substrate of :mod:`budgetopt.optim`
(same objective gradient, same Adam) but never project, retract or
transport.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import manifold as mf
from .core import BudgetProblem, ConstraintSet, RngStream, softmax_rows
from .knapsack import greedy_repair, greedy_repair_multi
from .optim import (RcoConfig, StepRecord, _drive, _extractor, _prepare, adam_step,
                    objective_gradient)
from .stochastic import Objective

METHODS = ("lagrangian", "augmented")
LAMBDA_GRID = (0.1, 1.0, 10.0, 100.0, 1000.0)
TUNING_MAX_VIOLATION = 0.5
AL_UPDATE_EVERY = 50
AL_RHO0 = 1.0
AL_GROWTH = 2.0
AL_SHRINK = 0.5
AL_RHO_MAX = 1e6


@dataclass
class PenaltyState:
    """Penalty parameters.

    ``lam`` drives the quadratic penalty.  ``mu`` and ``rho`` drive the
    augmented Lagrangian; ``mu`` has one entry per constraint.
    """

    lam: float = 0.0
    mu: np.ndarray = field(default_factory=lambda: np.zeros(1))
    rho: float = AL_RHO0
    update_every: int = AL_UPDATE_EVERY
    growth: float = AL_GROWTH
    shrink: float = AL_SHRINK
    rho_max: float = AL_RHO_MAX
    last_violation: float = math.inf
    steps: int = 0
    history: list[tuple[int, float, float]] = field(default_factory=list)

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not self.rho > 0:
            raise ValueError("rho must be positive")


def lagrangian_gradient(alpha, problem: BudgetProblem, objective_grad, lam: float) -> np.ndarray:
    """``objective_grad + 2 lam (C - B) grad C``: gradient of the quadratic penalty objective."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    resid = mf.expected_cost(alpha, problem) - problem.budget
    n = mf.constraint_normal(alpha, problem).vector
    return np.asarray(objective_grad, dtype=np.float64) + 2.0 * lam * resid * n


def _update_multipliers(state: PenaltyState, resid: np.ndarray) -> None:
    state.mu = state.mu + state.rho * resid
    violation = float(np.max(np.abs(resid)))
    if violation > state.shrink * state.last_violation:
        state.rho = min(state.rho * state.growth, state.rho_max)
    state.last_violation = violation
    state.history.append((state.steps, float(np.max(np.abs(state.mu))), violation))


def augmented_lagrangian_step(alpha, problem: BudgetProblem, objective_grad,
                              state: PenaltyState) -> tuple[np.ndarray, PenaltyState]:
    """Augmented-Lagrangian gradient ``objective_grad + [mu + rho (C - B)] grad C``.

    Counts the call as one step; every ``update_every`` steps the multiplier
    moves by ``rho (C - B)`` and ``rho`` grows by ``growth`` unless the
    violation shrank by at least ``shrink`` since the previous update.  With
    ``mu = 0`` the gradient equals :func:`lagrangian_gradient` at
    ``lam = rho / 2``.
    """
    resid = mf.expected_cost(alpha, problem) - problem.budget
    n = mf.constraint_normal(alpha, problem).vector
    grad = np.asarray(objective_grad, dtype=np.float64) + (float(state.mu[0]) + state.rho * resid) * n
    state.steps += 1
    if state.steps % state.update_every == 0:
        _update_multipliers(state, np.array([resid]))
    return grad, state


def _multi_terms(alpha, constraints: ConstraintSet, weights):
    resid = mf.multi_costs(alpha, constraints, weights) - constraints.budgets
    normals = [n.vector for n in mf.multi_normals(alpha, constraints, weights)]
    return resid, normals


def multi_lagrangian_gradient(alpha, constraints: ConstraintSet, weights, objective_grad,
                              lam: float) -> np.ndarray:
    resid, normals = _multi_terms(alpha, constraints, weights)
    grad = np.array(objective_grad, dtype=np.float64)
    for r, n in zip(resid, normals):
        grad += 2.0 * lam * r * n
    return grad


def multi_augmented_step(alpha, constraints: ConstraintSet, weights, objective_grad,
                         state: PenaltyState) -> tuple[np.ndarray, PenaltyState]:
    resid, normals = _multi_terms(alpha, constraints, weights)
    if state.mu.shape[0] != constraints.q:
        state.mu = np.zeros(constraints.q)
    grad = np.array(objective_grad, dtype=np.float64)
    for mu_j, r, n in zip(state.mu, resid, normals):
        grad += (mu_j + state.rho * r) * n
    state.steps += 1
    if state.steps % state.update_every == 0:
        _update_multipliers(state, resid)
    return grad, state


def run_baseline(problem: BudgetProblem, objective: Objective, method: str, config: RcoConfig,
                 alpha0=None, oracle_value: float | None = None, lam: float = 10.0,
                 state: PenaltyState | None = None, constraints: ConstraintSet | None = None,
                 return_logits: bool = False):
    """Run a penalty baseline with the same loop and trace schema as :func:`run_rco`.

    ``violation`` in the records is ``C - B`` at the post-step iterate and
    ``retraction_iterations`` is always 0.  With ``constraints`` given
    (more than one row), penalties apply to every constraint and records
    carry per-constraint violations.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    alpha0, grid = _prepare(problem, config, alpha0)
    rng = RngStream(config.seed)
    adam = config.adam(problem.shape)
    if state is None:
        state = PenaltyState(lam=lam if method == "lagrangian" else 0.0)
    w = problem.group_weights
    multi = constraints is not None and constraints.q > 1
    if constraints is not None:
        constraints.validate(w)

    def step_fn(a, tau):
        step = adam.t + 1
        loss, g = objective_gradient(a, objective, problem, config, grid, tau, rng, step)
        if multi:
            if method == "lagrangian":
                g_pen = multi_lagrangian_gradient(a, constraints, w, g, state.lam)
            else:
                g_pen, _ = multi_augmented_step(a, constraints, w, g, state)
        elif method == "lagrangian":
            g_pen = lagrangian_gradient(a, problem, g, state.lam)
        else:
            g_pen, _ = augmented_lagrangian_step(a, problem, g, state)
        a = adam_step(a, g_pen, adam)
        if multi:
            resid = mf.multi_costs(a, constraints, w) - constraints.budgets
            record = StepRecord(step, loss, float(resid[0] + constraints.budgets[0]),
                                float(resid[0]), float(np.max(np.abs(resid))), 0,
                                float(np.linalg.norm(g_pen)), tau,
                                constraint_violations=resid.tolist())
        else:
            cost = mf.expected_cost(a, problem)
            record = StepRecord(step, loss, cost, cost - problem.budget, abs(cost - problem.budget),
                                0, float(np.linalg.norm(g_pen)), tau)
        return a, record

    if multi:
        def repair(p):
            return greedy_repair_multi(p, constraints, w)
        extract = lambda a: repair(softmax_rows(a))  # noqa: E731
    else:
        def repair(p):
            return greedy_repair(p, problem)
        extract = _extractor(problem, config, grid)

    choices, trace, alpha = _drive(method, problem, config, alpha0, step_fn, extract,
                                   oracle_value, repair)
    trace.info["penalty_state"] = state
    return (choices, trace, alpha) if return_logits else (choices, trace)


def tune_lambda(problem: BudgetProblem, objective: Objective, config: RcoConfig,
                oracle_value: float, grid=LAMBDA_GRID,
                max_violation: float = TUNING_MAX_VIOLATION) -> tuple[float, dict[float, tuple]]:
    """Pick the penalty weight from ``grid`` on a held-out instance.

    Lowest final gap among weights whose mean ``|C - B|`` is at most
    ``max_violation``; if none qualifies, the weight with the smallest mean
    violation.  Returns the chosen weight and ``{lam: (gap, violation)}``.
    """
    results: dict[float, tuple[float, float]] = {}
    for lam in grid:
        _, trace = run_baseline(problem, objective, "lagrangian", config,
                                oracle_value=oracle_value, lam=lam)
        results[lam] = (trace.final_gap_pct, trace.mean_abs_violation())
    ok = [lam for lam, (_, v) in results.items() if v <= max_violation]
    if ok:
        best = min(ok, key=lambda lam: (results[lam][0], lam))
    else:
        best = min(results, key=lambda lam: (results[lam][1], lam))
    return best, results
