"""Problem definitions, validation helpers and the seeded random stream.

Everything here is a pure function of its inputs except :class:`RngStream`,
which is single-owner state.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np


class BudgetOptError(Exception):
    """Base class for all errors raised by this package."""


class InvalidProblem(BudgetOptError, ValueError):
    """Problem data is malformed (shape, finiteness, sign)."""


class InfeasibleBudget(InvalidProblem):
    pass


class DegenerateCosts(InvalidProblem):
    pass


class NonPositiveWeight(InvalidProblem):
    pass


@dataclass
class BudgetProblem:
    """N groups, K options with shared costs, per-group weights and a budget.

    ``values`` is only used by the knapsack benchmark objective.
    ``cost_scale`` is an optional hint for converting real costs to the
    integer grid used by the knapsack DP (see :func:`budgetopt.knapsack.quantize_costs`).

    Construction only coerces and shape-checks; call :func:`validate_problem`
    to enforce the feasibility window.
    """

    option_costs: np.ndarray
    group_weights: np.ndarray
    budget: float
    values: np.ndarray | None = None
    cost_scale: float | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.option_costs = np.asarray(self.option_costs, dtype=np.float64).reshape(-1)
        self.group_weights = np.asarray(self.group_weights, dtype=np.float64).reshape(-1)
        self.budget = float(self.budget)
        if self.values is not None:
            self.values = np.asarray(self.values, dtype=np.float64)
            if self.values.shape != (self.num_groups, self.num_options):
                raise InvalidProblem(
                    f"values has shape {self.values.shape}, "
                    f"expected {(self.num_groups, self.num_options)}"
                )
        if self.cost_scale is not None:
            self.cost_scale = float(self.cost_scale)

    @property
    def num_groups(self) -> int:
        return self.group_weights.shape[0]

    @property
    def num_options(self) -> int:
        return self.option_costs.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_groups, self.num_options)

    def cost_range(self) -> tuple[float, float]:
        """Smallest and largest achievable total discrete cost."""
        total_w = float(self.group_weights.sum())
        return total_w * float(self.option_costs.min()), total_w * float(self.option_costs.max())

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "num_groups": self.num_groups,
            "num_options": self.num_options,
            "option_costs": self.option_costs.tolist(),
            "group_weights": self.group_weights.tolist(),
            "budget": self.budget,
            "values": None if self.values is None else self.values.tolist(),
            "cost_scale": self.cost_scale,
        }
        out.update({k: v for k, v in self.meta.items() if k not in out})
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BudgetProblem":
        known = {"num_groups", "num_options", "option_costs", "group_weights",
                 "budget", "values", "cost_scale"}
        try:
            problem = cls(
                option_costs=data["option_costs"],
                group_weights=data["group_weights"],
                budget=data["budget"],
                values=data.get("values"),
                cost_scale=data.get("cost_scale"),
                meta={k: v for k, v in data.items() if k not in known},
            )
        except KeyError as exc:
            raise InvalidProblem(f"problem is missing field {exc}") from None
        if "num_groups" in data and data["num_groups"] != problem.num_groups:
            raise InvalidProblem("num_groups does not match group_weights")
        if "num_options" in data and data["num_options"] != problem.num_options:
            raise InvalidProblem("num_options does not match option_costs")
        return problem


def _check_window(costs: np.ndarray, weights: np.ndarray, budget: float) -> None:
    ratio = budget / weights.sum()
    lo, hi = costs.min(), costs.max()
    if not (lo < ratio < hi):
        raise InfeasibleBudget(
            f"budget {budget:g} outside the open window "
            f"({lo * weights.sum():g}, {hi * weights.sum():g})"
        )


def validate_problem(problem: BudgetProblem) -> None:
    """Raise unless ``problem`` satisfies every BudgetProblem invariant."""
    c, w = problem.option_costs, problem.group_weights
    if problem.num_groups < 1:
        raise InvalidProblem("need at least one group")
    if problem.num_options < 2:
        raise InvalidProblem("need at least two options")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(w)) and np.isfinite(problem.budget)):
        raise InvalidProblem("costs, weights and budget must be finite")
    if problem.values is not None and not np.all(np.isfinite(problem.values)):
        raise InvalidProblem("values must be finite")
    if np.any(w <= 0):
        raise NonPositiveWeight("all group weights must be strictly positive")
    if np.any(c <= 0):
        raise InvalidProblem("all option costs must be strictly positive")
    if np.all(c == c[0]):
        raise DegenerateCosts("option costs are all equal; the budget level set is not a manifold")
    _check_window(c, w, problem.budget)


@dataclass
class ConstraintSet:
    """``q`` linear-in-probability budget constraints sharing group weights.

    Row ``j`` of ``costs`` is the option cost vector of constraint ``j``.
    """

    costs: np.ndarray
    budgets: np.ndarray
    slack_enabled: bool = False

    def __post_init__(self):
        self.costs = np.atleast_2d(np.asarray(self.costs, dtype=np.float64))
        self.budgets = np.asarray(self.budgets, dtype=np.float64).reshape(-1)
        if self.costs.shape[0] != self.budgets.shape[0]:
            raise InvalidProblem("one budget per constraint row is required")

    @property
    def q(self) -> int:
        return self.costs.shape[0]

    @classmethod
    def from_problem(cls, problem: BudgetProblem, slack: bool = False) -> "ConstraintSet":
        return cls(problem.option_costs[None, :], [problem.budget], slack_enabled=slack)

    def validate(self, group_weights: np.ndarray) -> None:
        if self.q < 1:
            raise InvalidProblem("need at least one constraint")
        if self.slack_enabled and self.q != 1:
            raise InvalidProblem("slack mode supports a single constraint only")
        w = np.asarray(group_weights, dtype=np.float64)
        for j in range(self.q):
            c = self.costs[j]
            if np.any(c <= 0) or not np.all(np.isfinite(c)):
                raise InvalidProblem(f"constraint {j}: costs must be finite and positive")
            if np.all(c == c[0]):
                raise DegenerateCosts(f"constraint {j}: costs are all equal")
            _check_window(c, w, float(self.budgets[j]))

    def to_dict(self) -> dict[str, Any]:
        return {"costs": self.costs.tolist(), "budgets": self.budgets.tolist(),
                "slack_enabled": self.slack_enabled}


def check_logits(alpha, problem: BudgetProblem | None = None) -> np.ndarray:
    """Coerce ``alpha`` to a finite float64 N x K matrix."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 2:
        raise InvalidProblem(f"logits must be 2-D, got shape {alpha.shape}")
    if problem is not None and alpha.shape != problem.shape:
        raise InvalidProblem(f"logits shape {alpha.shape} does not match problem {problem.shape}")
    if not np.all(np.isfinite(alpha)):
        raise InvalidProblem("logits must be finite")
    return alpha


def check_assignment(choices, problem: BudgetProblem) -> np.ndarray:
    choices = np.asarray(choices)
    if choices.shape != (problem.num_groups,):
        raise InvalidProblem(f"assignment has shape {choices.shape}, expected ({problem.num_groups},)")
    if not np.issubdtype(choices.dtype, np.integer):
        raise InvalidProblem("assignment entries must be integers")
    if np.any(choices < 0) or np.any(choices >= problem.num_options):
        raise InvalidProblem("assignment index out of range")
    return choices.astype(np.intp)


def softmax_rows(alpha) -> np.ndarray:
    """Row-wise softmax with the row maximum subtracted first."""
    alpha = np.asarray(alpha, dtype=np.float64)
    z = alpha - alpha.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def log_softmax_rows(alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    z = alpha - alpha.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def discrete_cost(choices, problem: BudgetProblem) -> float:
    """Total cost ``sum_i w_i * c[choices[i]]`` of a discrete assignment."""
    choices = np.asarray(choices, dtype=np.intp)
    return float(np.dot(problem.group_weights, problem.option_costs[choices]))


def assignment_value(choices, values: np.ndarray) -> float:
    choices = np.asarray(choices, dtype=np.intp)
    return float(values[np.arange(values.shape[0]), choices].sum())


class RngStream:
    """Seeded stream backed by numpy's counter-based Philox-4x64-10 generator.

    Child streams from :meth:`spawn` are derived through ``SeedSequence``
    spawn keys, so the same seed always yields the same tree of streams.
    A stream must not be shared between threads; spawn children instead.
    """

    algorithm = "Philox-4x64-10"

    def __init__(self, seed: int, _seq: np.random.SeedSequence | None = None):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._seq = _seq if _seq is not None else np.random.SeedSequence(self.seed)
        self.generator = np.random.Generator(np.random.Philox(self._seq))

    def spawn(self, n: int) -> list["RngStream"]:
        return [RngStream(self.seed, child) for child in self._seq.spawn(n)]

    def child(self, *key: int) -> "RngStream":
        """Stream addressed by an explicit key path, independent of spawn order."""
        seq = np.random.SeedSequence(self.seed, spawn_key=tuple(self._seq.spawn_key) + tuple(key))
        return RngStream(self.seed, seq)

    @property
    def position(self) -> dict[str, Any]:
        state = self.generator.bit_generator.state
        return {
            "seed": self.seed,
            "spawn_key": list(self._seq.spawn_key),
            "children_spawned": self._seq.n_children_spawned,
            "counter": [int(x) for x in state["state"]["counter"]],
            "buffer_pos": int(state["buffer_pos"]),
        }

    def uniform(self, shape: Sequence[int] | int) -> np.ndarray:
        return self.generator.random(shape)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, spawn_key={tuple(self._seq.spawn_key)})"
