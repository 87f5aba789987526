"""Multiple-choice knapsack: exact DP, brute-force oracle and greedy repair."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BudgetOptError, BudgetProblem, ConstraintSet, discrete_cost, log_softmax_rows

DEFAULT_SCALE = 1000.0
DEFAULT_GRID_CAP = 2_000_000
LOG_FLOOR = np.log(1e-300)


class Infeasible(BudgetOptError):
    pass


class GridTooLarge(BudgetOptError):
    pass


class TooLarge(BudgetOptError):
    pass


@dataclass(frozen=True)
class IntegerCostGrid:
    """Per-(group, option) integer cost units and the integer budget."""

    units: np.ndarray
    budget_units: int
    scale: float
    max_rel_error: float = 0.0

    @property
    def shape(self):
        return self.units.shape


@dataclass(frozen=True)
class KnapsackSolution:
    choices: np.ndarray
    score: float
    cost: float


def quantize_costs(problem: BudgetProblem, scale: float | None = None,
                   cap: int = DEFAULT_GRID_CAP) -> IntegerCostGrid:
    """Round ``scale * w_i * c_k`` to integers and floor ``scale * B``.

    ``scale`` defaults to ``problem.cost_scale`` if set, else 1000.  The
    returned grid reports the worst per-entry relative rounding error.
    """
    if scale is None:
        scale = problem.cost_scale if problem.cost_scale is not None else DEFAULT_SCALE
    if not scale > 0:
        raise ValueError("scale must be positive")
    exact = scale * problem.group_weights[:, None] * problem.option_costs[None, :]
    units = np.rint(exact).astype(np.int64)
    # guard against 0.999999... from floating products on exact grids
    budget_units = int(np.floor(scale * problem.budget + 1e-9 * max(1.0, abs(scale * problem.budget))))
    if budget_units > cap:
        raise GridTooLarge(f"integer budget {budget_units} exceeds cap {cap}; use a smaller scale")
    if np.any(units < 0):
        raise ValueError("negative cost units")
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(exact > 0, np.abs(units - exact) / exact, np.abs(units - exact))
    return IntegerCostGrid(units, budget_units, float(scale), float(rel.max()) if rel.size else 0.0)


def dp_solve(scores, grid: IntegerCostGrid) -> KnapsackSolution:
    """Maximize ``sum_i scores[i, z_i]`` subject to ``sum_i units[i, z_i] <= B'``.

    O(N K B') time; the table keeps B' + 1 entries per group.  Among equal
    scores the lowest option index wins.
    """
    scores = np.asarray(scores, dtype=np.float64)
    units = grid.units
    n_groups, n_options = scores.shape
    if units.shape != scores.shape:
        raise ValueError(f"scores shape {scores.shape} does not match grid {units.shape}")
    cap = grid.budget_units
    if units.min(axis=1).sum() > cap:
        raise Infeasible("even the cheapest assignment exceeds the budget")

    ch_dtype = np.uint8 if n_options <= 255 else np.uint16
    choice = np.zeros((n_groups, cap + 1), dtype=ch_dtype)
    prev = np.zeros(cap + 1)
    cur = np.empty(cap + 1)
    for i in range(n_groups):
        cur.fill(-np.inf)
        row = choice[i]
        for k in range(n_options):
            u = int(units[i, k])
            if u > cap:
                continue
            cand = prev[: cap + 1 - u] + scores[i, k]
            seg = cur[u:]
            better = cand > seg
            np.copyto(seg, cand, where=better)
            np.copyto(row[u:], k, where=better, casting="unsafe")
        prev, cur = cur, prev

    best = prev[cap]
    if not np.isfinite(best):
        raise Infeasible("no feasible assignment on the integer grid")
    choices = np.empty(n_groups, dtype=np.intp)
    b = cap
    for i in range(n_groups - 1, -1, -1):
        k = int(choice[i, b])
        choices[i] = k
        b -= int(units[i, k])
    total = int(units[np.arange(n_groups), choices].sum())
    return KnapsackSolution(choices, float(best), float(total))


def brute_force_solve(scores, problem: BudgetProblem, max_states: int = 10**7,
                      chunk: int = 1 << 16) -> KnapsackSolution:
    """Exhaustive search over all K^N assignments with real-valued costs."""
    scores = np.asarray(scores, dtype=np.float64)
    n_groups, n_options = scores.shape
    total_states = n_options ** n_groups
    if total_states > max_states:
        raise TooLarge(f"{total_states} assignments exceed the enumeration limit {max_states}")
    w, c = problem.group_weights, problem.option_costs
    best_score, best_idx = -np.inf, -1
    dims = (n_options,) * n_groups
    for start in range(0, total_states, chunk):
        idx = np.arange(start, min(start + chunk, total_states))
        digits = np.unravel_index(idx, dims)
        score = np.zeros(idx.shape[0])
        cost = np.zeros(idx.shape[0])
        for i in range(n_groups):
            score = score + scores[i, digits[i]]
            cost = cost + w[i] * c[digits[i]]
        score = np.where(cost <= problem.budget, score, -np.inf)
        j = int(np.argmax(score))
        if score[j] > best_score:
            best_score, best_idx = float(score[j]), int(idx[j])
    if best_idx < 0:
        raise Infeasible("no assignment satisfies the budget")
    choices = np.array(np.unravel_index(best_idx, dims), dtype=np.intp)
    return KnapsackSolution(choices, best_score, discrete_cost(choices, problem))


def greedy_repair(p, problem: BudgetProblem) -> np.ndarray:
    """Turn a probability matrix into a budget-feasible assignment.

    Starts from the row-wise argmax.  While over budget, applies the single
    group switch with the smallest probability loss per unit of cost saved.
    """
    p = np.asarray(p, dtype=np.float64)
    w, c, budget = problem.group_weights, problem.option_costs, problem.budget
    n = p.shape[0]
    rows = np.arange(n)
    z = np.argmax(p, axis=1)
    cost = discrete_cost(z, problem)
    if cost <= budget:
        return z
    if float(w.sum() * c.min()) > budget:
        raise Infeasible("even the cheapest assignment exceeds the budget")

    def _ratios(idx, cur):
        saved = w[idx, None] * (c[cur][:, None] - c[None, :])
        loss = p[idx, cur][:, None] - p[idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(saved > 0, loss / saved, np.inf)

    ratio = _ratios(rows, z)
    best_k = np.argmin(ratio, axis=1)
    best_ratio = ratio[rows, best_k]
    while cost > budget:
        i = int(np.argmin(best_ratio))
        if not np.isfinite(best_ratio[i]):
            raise Infeasible("no cost-reducing switch left")
        z[i] = best_k[i]
        r = _ratios(np.array([i]), z[i:i + 1])[0]
        best_k[i] = int(np.argmin(r))
        best_ratio[i] = r[best_k[i]]
        cost = discrete_cost(z, problem)
    return z


def greedy_repair_multi(p, constraints: ConstraintSet, weights) -> np.ndarray:
    """Greedy repair against several ``<=`` budgets at once.

    Each switch must strictly reduce the total normalized excess
    ``sum_j max(0, cost_j - b_j) / b_j``; the switch with the smallest
    probability loss per unit of excess removed is applied.
    """
    p = np.asarray(p, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    cm, b = constraints.costs, constraints.budgets
    n, k_opts = p.shape
    rows = np.arange(n)
    z = np.argmax(p, axis=1)

    def _excess(costs):
        return np.maximum(costs - b, 0.0) / b

    totals = w @ cm[:, z].T
    excess = _excess(totals).sum()
    while excess > 0:
        # totals after switching group i to option k: totals + w_i (c[:, k] - c[:, z_i])
        delta = w[:, None, None] * (cm.T[None, :, :] - cm.T[z][:, None, :])
        new_excess = _excess(totals[None, None, :] + delta).sum(axis=2)
        gain = excess - new_excess
        loss = p[rows, z][:, None] - p
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(gain > 1e-15, loss / gain, np.inf)
        flat = int(np.argmin(ratio))
        i, k = divmod(flat, k_opts)
        if not np.isfinite(ratio[i, k]):
            raise Infeasible("greedy repair stalled with constraints still violated")
        z[i] = k
        totals = w @ cm[:, z].T
        excess = _excess(totals).sum()
    return z


def extract_final(p, problem: BudgetProblem, grid: IntegerCostGrid | None = None) -> np.ndarray:
    """DP on clamped log-probabilities: the noiseless final assignment."""
    if grid is None:
        grid = quantize_costs(problem)
    p = np.asarray(p, dtype=np.float64)
    scores = np.log(np.maximum(p, 1e-300))
    return dp_solve(scores, grid).choices


def extract_from_logits(alpha, problem: BudgetProblem, grid: IntegerCostGrid | None = None) -> np.ndarray:
    """Same as :func:`extract_final` but uses ``log_softmax`` directly on the logits."""
    if grid is None:
        grid = quantize_costs(problem)
    return dp_solve(np.maximum(log_softmax_rows(alpha), LOG_FLOOR), grid).choices


def solve_oracle(problem: BudgetProblem, grid: IntegerCostGrid | None = None) -> KnapsackSolution:
    """DP optimum of the benchmark values; the denominator of the gap metric."""
    if problem.values is None:
        raise ValueError("problem has no values matrix")
    if grid is None:
        grid = quantize_costs(problem)
    sol = dp_solve(problem.values, grid)
    return KnapsackSolution(sol.choices, sol.score, discrete_cost(sol.choices, problem))
