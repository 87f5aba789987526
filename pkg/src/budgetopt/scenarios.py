"""Seeded generators for the benchmark knapsack families.

Every family uses group weights ``w_i = k_i / W`` with positive integer
numerators ``k_i`` and ``W = sum k_i``, and costs that are integer multiples
of ``1 / d``.  Setting ``cost_scale = W * d`` then makes the knapsack DP grid
exact.  Budgets sit half a grid unit above an integer level so no discrete
total lands exactly on the budget.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .core import BudgetOptError, BudgetProblem, ConstraintSet, RngStream, validate_problem
from .knapsack import solve_oracle

MAX_ATTEMPTS = 100
MULTI_SHAPE = (500, 32, 16)
MULTI_GRAM_COND_LIMIT = 1e6


class GenerationFailed(BudgetOptError):
    pass


@dataclass(frozen=True)
class FamilyParams:
    num_groups: int
    num_options: int
    budget_fraction: float = 0.5
    costs: str = "integer"
    values: str = "uniform"
    weights: str = "uniform"
    extra: dict[str, float] = field(default_factory=dict)


FAMILIES: dict[str, FamilyParams] = {
    "small_easy": FamilyParams(20, 4),
    "medium": FamilyParams(50, 8),
    "large": FamilyParams(200, 16),
    "huge": FamilyParams(1000, 32),
    "float_costs": FamilyParams(200, 16, costs="float"),
    "correlated": FamilyParams(50, 8, values="correlated", extra={"noise": 0.6, "min_corr": 0.9}),
    "correlated_tight": FamilyParams(50, 8, budget_fraction=0.15, values="correlated",
                                     extra={"noise": 0.6, "min_corr": 0.9}),
    "adversarial": FamilyParams(50, 8, costs="clustered", values="tied"),
    "boundary": FamilyParams(50, 8, values="boundary", extra={"min_cost_ratio": 0.99}),
    "cheap_optimal": FamilyParams(50, 8, budget_fraction=0.7, values="cheap",
                                  extra={"max_cost_ratio": 0.8}),
    "mixed_slack": FamilyParams(50, 8, budget_fraction=0.6, values="mixed",
                                extra={"max_cost_ratio": 0.95}),
    "tight_budget": FamilyParams(50, 8, budget_fraction=0.2),
    "nonuniform": FamilyParams(50, 8, weights="spread", extra={"min_weight_ratio": 20.0}),
}


@dataclass(frozen=True)
class ScenarioSpec:
    family: str
    seed: int = 0
    num_groups: int | None = None
    num_options: int | None = None
    budget_fraction: float | None = None

    def params(self) -> FamilyParams:
        if self.family not in FAMILIES:
            raise KeyError(f"unknown scenario family {self.family!r}; known: {sorted(FAMILIES)}")
        base = FAMILIES[self.family]
        return FamilyParams(
            self.num_groups or base.num_groups,
            self.num_options or base.num_options,
            base.budget_fraction if self.budget_fraction is None else self.budget_fraction,
            base.costs, base.values, base.weights, dict(base.extra),
        )

    def to_dict(self) -> dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioSpec":
        return cls(**{k: data[k] for k in ("family", "seed", "num_groups", "num_options",
                                           "budget_fraction") if k in data})


def _family_stream(family: str, seed: int) -> RngStream:
    return RngStream(seed).child(zlib.crc32(family.encode()))


def _cost_units(params: FamilyParams, gen: np.random.Generator) -> tuple[np.ndarray, int]:
    """Ascending option costs as integers ``cu`` and the divisor ``d`` (costs = cu / d)."""
    k = params.num_options
    if params.costs == "integer":
        return np.arange(1, k + 1, dtype=np.int64), 1
    if params.costs == "float":
        lo, hi, d = 0.5, 16.5, 100
    elif params.costs == "clustered":
        lo, hi, d = 9.5, 10.5, 1000
    else:
        raise ValueError(params.costs)
    # distinct draws without replacement on the 1/d lattice
    lattice = np.arange(int(round(lo * d)), int(round(hi * d)) + 1, dtype=np.int64)
    return np.sort(gen.choice(lattice, size=k, replace=False)), d


def _weight_numerators(params: FamilyParams, gen: np.random.Generator) -> np.ndarray:
    n = params.num_groups
    if params.weights == "uniform":
        return np.ones(n, dtype=np.int64)
    return np.maximum(1, np.rint(10.0 ** gen.uniform(0.0, 2.0, n))).astype(np.int64)


def _rescale(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    return 100.0 * (x - lo) / (hi - lo)


def _values(params: FamilyParams, costs: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    n, k = params.num_groups, params.num_options
    unit = (costs - costs.min()) / (costs.max() - costs.min())
    if params.values == "uniform":
        return gen.uniform(0.0, 100.0, (n, k))
    if params.values == "correlated":
        noisy = costs[None, :] + gen.normal(0.0, params.extra["noise"], (n, k))
        return _rescale(noisy)
    if params.values == "tied":
        return 99.0 + gen.uniform(0.0, 1.0, (n, k))
    if params.values == "boundary":
        return 90.0 * unit[None, :] + gen.uniform(0.0, 10.0, (n, k))
    if params.values == "cheap":
        return gen.uniform(0.0, 100.0, (n, k)) * np.exp(-(costs - costs.min())[None, :] / 2.0)
    if params.values == "mixed":
        vals = gen.uniform(0.0, 100.0, (n, k))
        cheap = np.arange(n) % 2 == 0
        vals[cheap] *= np.exp(-(costs - costs.min())[None, :] / 2.0)
        return vals
    raise ValueError(params.values)


def _check_contracts(params: FamilyParams, problem: BudgetProblem) -> dict[str, Any]:
    """Evaluate the family contract; ``ok`` is False if it does not hold."""
    checks: dict[str, Any] = {}
    oracle = solve_oracle(problem)
    checks["oracle_value"] = oracle.score
    checks["oracle_cost_ratio"] = oracle.cost / problem.budget
    ok = True
    extra = params.extra
    if "min_corr" in extra:
        c = np.broadcast_to(problem.option_costs, problem.values.shape).ravel()
        corr = float(np.corrcoef(c, problem.values.ravel())[0, 1])
        checks["cost_value_corr"] = corr
        ok &= corr >= extra["min_corr"]
    if "min_cost_ratio" in extra:
        ok &= checks["oracle_cost_ratio"] >= extra["min_cost_ratio"]
    if "max_cost_ratio" in extra:
        ok &= checks["oracle_cost_ratio"] <= extra["max_cost_ratio"]
    if "min_weight_ratio" in extra:
        ratio = float(problem.group_weights.max() / problem.group_weights.min())
        checks["weight_ratio"] = ratio
        ok &= ratio >= extra["min_weight_ratio"]
    checks["ok"] = bool(ok)
    return checks


def _build(spec: ScenarioSpec, params: FamilyParams, gen: np.random.Generator) -> BudgetProblem:
    cu, d = _cost_units(params, gen)
    num = _weight_numerators(params, gen)
    total = int(num.sum())
    scale = float(total * d)
    lo_units, hi_units = total * int(cu[0]), total * int(cu[-1])
    level = int(np.floor(lo_units + params.budget_fraction * (hi_units - lo_units)))
    level = min(max(level, lo_units), hi_units - 1)
    costs = cu / d
    return BudgetProblem(
        option_costs=costs,
        group_weights=num / total,
        budget=(level + 0.5) / scale,
        values=_values(params, costs, gen),
        cost_scale=scale,
        meta={"family": spec.family, "seed": spec.seed, "budget_fraction": params.budget_fraction},
    )


def generate(spec: ScenarioSpec | str, seed: int | None = None) -> BudgetProblem:
    """Generate one instance; resample until the family contract holds.

    Raises :class:`GenerationFailed` after ``MAX_ATTEMPTS`` failed draws.
    The DP optimum and contract checks are stored in ``problem.meta``.
    """
    if isinstance(spec, str):
        spec = ScenarioSpec(spec, 0 if seed is None else seed)
    params = spec.params()
    gen = _family_stream(spec.family, spec.seed).generator
    checks: dict[str, Any] = {}
    for attempt in range(MAX_ATTEMPTS):
        problem = _build(spec, params, gen)
        validate_problem(problem)
        checks = _check_contracts(params, problem)
        if checks["ok"]:
            problem.meta["contracts"] = checks
            problem.meta["attempts"] = attempt + 1
            return problem
    raise GenerationFailed(f"{spec.family} seed {spec.seed}: contract failed {MAX_ATTEMPTS} times ({checks})")


def generate_multi(seed: int, shape: tuple[int, int, int] = MULTI_SHAPE
                   ) -> tuple[BudgetProblem, ConstraintSet]:
    """Instance with ``q`` simultaneous budget constraints.

    Costs of every constraint are uniform on [0.5, 1.5]; each budget is the
    expected cost under a random full-support reference point, so the joint
    level set is non-empty.  The base problem carries constraint 0.
    """
    n, k, q = shape
    gen = _family_stream("multi", seed).generator
    weights = np.full(n, 1.0 / n)
    for _ in range(MAX_ATTEMPTS):
        costs = gen.uniform(0.5, 1.5, (q, k))
        ref = gen.normal(0.0, 1.0, (n, k))
        ref = np.exp(ref - ref.max(axis=1, keepdims=True))
        ref /= ref.sum(axis=1, keepdims=True)
        budgets = (weights @ ref) @ costs.T
        centered = costs - costs.mean(axis=1, keepdims=True)
        # at uniform logits every group's normal is w_i / K times the centered cost row
        gram = n * (1.0 / (n * k)) ** 2 * centered @ centered.T
        cond = float(np.linalg.cond(gram))
        if cond < MULTI_GRAM_COND_LIMIT:
            break
    else:
        raise GenerationFailed(f"multi seed {seed}: dependent constraint normals")
    constraints = ConstraintSet(costs, budgets)
    constraints.validate(weights)
    base = BudgetProblem(costs[0], weights, float(budgets[0]),
                         values=gen.uniform(0.0, 100.0, (n, k)),
                         meta={"family": "multi", "seed": seed, "gram_cond": cond})
    validate_problem(base)
    return base, constraints


def problem_to_json(problem: BudgetProblem, constraints: ConstraintSet | None = None) -> str:
    data = problem.to_dict()
    if constraints is not None:
        data["constraints"] = constraints.to_dict()
    return json.dumps(data, sort_keys=True, indent=1)


def problem_from_json(text: str) -> tuple[BudgetProblem, ConstraintSet | None]:
    data = json.loads(text)
    cons = data.pop("constraints", None)
    constraints = None
    if cons is not None:
        constraints = ConstraintSet(cons["costs"], cons["budgets"], cons.get("slack_enabled", False))
    return BudgetProblem.from_dict(data), constraints


def save_problem(path, problem: BudgetProblem, constraints: ConstraintSet | None = None) -> None:
    Path(path).write_text(problem_to_json(problem, constraints) + "\n")


def load_problem(path) -> tuple[BudgetProblem, ConstraintSet | None]:
    return problem_from_json(Path(path).read_text())

