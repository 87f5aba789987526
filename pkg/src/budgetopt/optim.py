"""Adam on the budget manifold: project, step, retract, transport.

Three variants share one driver: equality constraint (bisection
retraction), inequality via a slack coordinate, and several simultaneous
equality constraints (Newton retraction).
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable

import numpy as np

from . import manifold as mf
from .core import (BudgetProblem, ConstraintSet, RngStream, assignment_value, check_logits,
                   softmax_rows, validate_problem)
from .knapsack import (IntegerCostGrid, extract_final, greedy_repair, greedy_repair_multi,
                       quantize_costs)
from .stochastic import Objective, TemperatureSchedule, softmax_vjp, ste_gradient

logger = logging.getLogger(__name__)

MODES = ("equality", "slack", "multi")
GRAD_MODES = ("relaxed", "ste")
EXTRACTIONS = ("greedy", "dp")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, shape, **hyper) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), **hyper)


def adam_step(alpha, grad, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update; mutates ``state`` in place."""
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (grad * grad)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return alpha - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class RcoConfig:
    steps: int = 5000
    gumbel_samples: int = 1
    tau0: float = 1.0
    tau_min: float = 0.01
    retraction_tol: float = 1e-8
    bracket: float = 50.0
    mode: str = "equality"
    grad: str = "relaxed"
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    extraction: str = "greedy"
    newton_tol: float = 1e-12
    newton_max_iters: int = 20
    sample_jobs: int | None = None
    gap_every: int = 1

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.gumbel_samples < 1:
            raise ValueError("gumbel_samples must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.grad not in GRAD_MODES:
            raise ValueError(f"grad must be one of {GRAD_MODES}")
        if self.extraction not in EXTRACTIONS:
            raise ValueError(f"extraction must be one of {EXTRACTIONS}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")

    @property
    def schedule(self) -> TemperatureSchedule:
        return TemperatureSchedule(self.tau0, self.tau_min, self.steps)

    def adam(self, shape) -> AdamState:
        return AdamState.zeros(shape, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.adam_eps)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RcoConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


@dataclass
class StepRecord:
    """One optimizer step.

    ``violation`` is the signed ``C(alpha) - B``; ``abs_violation`` is the
    magnitude of whatever the method enforces (``|C - B|`` for equality
    modes, ``max(0, C - B)`` under the slack inequality, the largest
    per-constraint ``|C_j - b_j|`` in multi mode).
    """

    step: int
    loss: float
    expected_cost: float
    violation: float
    abs_violation: float
    retraction_iterations: int
    grad_norm: float
    temperature: float
    slack: float | None = None
    gap_pct: float | None = None
    constraint_violations: list[float] | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


STEP_RECORD_FIELDS = tuple(f.name for f in fields(StepRecord))


@dataclass
class RunTrace:
    method: str
    seed: int
    records: list[StepRecord] = field(default_factory=list)
    init_gap_pct: float | None = None
    final_gap_pct: float | None = None
    final_value: float | None = None
    oracle_value: float | None = None
    extraction: str = "greedy"
    wall_clock: float = 0.0
    info: dict[str, Any] = field(default_factory=dict)

    def gaps(self) -> np.ndarray:
        return np.array([np.nan if r.gap_pct is None else r.gap_pct for r in self.records])

    def steps_to_gap(self, threshold: float = 1.0) -> int | None:
        """First step whose repaired gap is at or below ``threshold`` percent."""
        for r in self.records:
            if r.gap_pct is not None and r.gap_pct <= threshold:
                return r.step
        return None

    def mean_abs_violation(self) -> float:
        if not self.records:
            return 0.0
        return float(np.mean([r.abs_violation for r in self.records]))

    def max_abs_violation(self) -> float:
        if not self.records:
            return 0.0
        return float(np.max([r.abs_violation for r in self.records]))

    def max_retraction_iterations(self) -> int:
        return max((r.retraction_iterations for r in self.records), default=0)

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)


def gap_percent(oracle_value: float, value: float) -> float:
    return 100.0 * (oracle_value - value) / oracle_value


def relaxed_gradient(alpha, objective: Objective) -> tuple[float, np.ndarray]:
    p = softmax_rows(alpha)
    loss, grad_p = objective.relaxed(p)
    return loss, softmax_vjp(p, np.asarray(grad_p, dtype=np.float64))


def objective_gradient(alpha, objective: Objective, problem: BudgetProblem, config: RcoConfig,
                       grid: IntegerCostGrid | None, tau: float, rng: RngStream, step: int):
    """Gradient of the objective w.r.t. logits, before any constraint handling.

    Every method (manifold and penalty baselines) goes through this function,
    so they see identical gradients for identical logits and seed.
    """
    if config.grad == "relaxed":
        return relaxed_gradient(alpha, objective)
    ste, loss = ste_gradient(alpha, objective, problem, grid, tau, config.gumbel_samples,
                             rng.child(step), n_jobs=config.sample_jobs)
    return loss, ste.grad


def initialize_on_manifold(alpha0, problem: BudgetProblem, tol: float = mf.DEFAULT_TOL,
                           bracket: float = mf.DEFAULT_BRACKET) -> np.ndarray:
    """One bisection retraction onto the level set; ``alpha0 = 0`` is the uniform prior."""
    alpha0 = check_logits(alpha0, problem)
    return mf.retract_binary(alpha0, problem, tol=tol, bracket=bracket)[0]


def rco_step(alpha, state: AdamState, problem: BudgetProblem, objective: Objective,
             config: RcoConfig, rng: RngStream, grid: IntegerCostGrid | None = None,
             tau: float | None = None, normal: mf.Normal | None = None):
    """Gradient, tangent projection, Adam, bisection retraction, momentum transport.

    Returns the new logits, the step record and the normal at the new point
    (pass it back in as ``normal`` to skip recomputing it next step).
    """
    step = state.t + 1
    if tau is None:
        tau = config.schedule(step)
    loss, g = objective_gradient(alpha, objective, problem, config, grid, tau, rng, step)
    n = normal if normal is not None else mf.constraint_normal(alpha, problem)
    g_tan = mf.tangent_project(g, n)
    alpha = adam_step(alpha, g_tan, state)
    alpha, report = mf.retract_binary(alpha, problem, tol=config.retraction_tol, bracket=config.bracket)
    n_new = mf.constraint_normal(alpha, problem)
    state.m = mf.transport(state.m, n_new)
    cost = mf.expected_cost(alpha, problem)
    record = StepRecord(step, loss, cost, cost - problem.budget, abs(cost - problem.budget),
                        report.iterations, float(np.linalg.norm(g_tan)), tau)
    return alpha, record, n_new


class _GapTracker:
    def __init__(self, problem, oracle_value, every, repair):
        self.active = oracle_value is not None and problem.values is not None and every > 0
        self.problem, self.oracle_value, self.every, self.repair = problem, oracle_value, every, repair

    def __call__(self, alpha, step):
        if not self.active or (step % self.every and step != 0):
            return None
        choices = self.repair(softmax_rows(alpha))
        return gap_percent(self.oracle_value, assignment_value(choices, self.problem.values))


def _drive(method, problem, config, alpha, step_fn, extract_fn, oracle_value, repair):
    """Shared loop: anneal temperature, step, track gap, extract."""
    started = time.perf_counter()
    trace = RunTrace(method=method, seed=config.seed, oracle_value=oracle_value,
                     extraction=config.extraction)
    gaps = _GapTracker(problem, oracle_value, config.gap_every, repair)
    trace.init_gap_pct = gaps(alpha, 0)
    schedule = config.schedule
    for step in range(1, config.steps + 1):
        alpha, record = step_fn(alpha, schedule(step))
        record.gap_pct = gaps(alpha, step)
        trace.records.append(record)
        if logger.isEnabledFor(logging.DEBUG) and step % 100 == 0:
            logger.debug("%s step %d loss %.6g |v| %.3g gap %s", method, step, record.loss,
                         record.abs_violation, record.gap_pct)
    choices = extract_fn(alpha)
    if problem.values is not None:
        trace.final_value = assignment_value(choices, problem.values)
        if oracle_value is not None:
            trace.final_gap_pct = gap_percent(oracle_value, trace.final_value)
    trace.wall_clock = time.perf_counter() - started
    trace.info["final_logits_norm"] = float(np.linalg.norm(alpha))
    return choices, trace, alpha


def _extractor(problem, config, grid):
    if config.extraction == "dp":
        return lambda a: extract_final(softmax_rows(a), problem, grid)
    return lambda a: greedy_repair(softmax_rows(a), problem)


def _prepare(problem, config, alpha0):
    validate_problem(problem)
    if alpha0 is None:
        alpha0 = np.zeros(problem.shape)
    alpha0 = check_logits(alpha0, problem)
    needs_grid = config.grad == "ste" or config.extraction == "dp"
    grid = quantize_costs(problem) if needs_grid else None
    return alpha0, grid


def run_rco(problem: BudgetProblem, objective: Objective, config: RcoConfig, alpha0=None,
            oracle_value: float | None = None, return_logits: bool = False):
    """Equality-constrained optimization on the budget manifold.

    Returns ``(choices, trace)`` (plus the final logits with
    ``return_logits=True``).  With ``oracle_value`` set, each record carries
    the repaired gap to that value.
    """
    alpha0, grid = _prepare(problem, config, alpha0)
    rng = RngStream(config.seed)
    alpha = initialize_on_manifold(alpha0, problem, config.retraction_tol, config.bracket)
    state = config.adam(problem.shape)
    cache = {"normal": None}

    def step_fn(a, tau):
        a, record, cache["normal"] = rco_step(a, state, problem, objective, config, rng, grid,
                                              tau, cache["normal"])
        return a, record

    choices, trace, alpha = _drive("manifold", problem, config, alpha, step_fn,
                                   _extractor(problem, config, grid), oracle_value,
                                   lambda p: greedy_repair(p, problem))
    trace.info["adam_state"] = state
    return (choices, trace, alpha) if return_logits else (choices, trace)


def rco_slack_step(alpha, s, state: AdamState, problem, objective, config, rng, grid, tau):
    """One step on ``C(alpha) + s^2 = B``; Adam runs over the augmented vector (alpha, s)."""
    step = state.t + 1
    loss, g = objective_gradient(alpha, objective, problem, config, grid, tau, rng, step)
    n = mf.constraint_normal(alpha, problem)
    g_alpha, g_s = mf.slack_project(g, n, s)
    shape = alpha.shape
    aug = np.append(alpha.ravel(), s)
    aug = adam_step(aug, np.append(g_alpha.ravel(), g_s), state)
    alpha, slack = mf.slack_retract(aug[:-1].reshape(shape), problem, config.retraction_tol,
                                    config.bracket)
    n_new = mf.constraint_normal(alpha, problem)
    m_alpha, m_s = mf.slack_project(state.m[:-1].reshape(shape), n_new, slack.s, float(state.m[-1]))
    state.m = np.append(m_alpha.ravel(), m_s)
    cost = mf.expected_cost(alpha, problem)
    grad_norm = math.sqrt(float(np.vdot(g_alpha, g_alpha)) + g_s * g_s)
    record = StepRecord(step, loss, cost, cost - problem.budget, max(0.0, cost - problem.budget),
                        slack.iterations, grad_norm, tau, slack=slack.s)
    return alpha, slack.s, record


def run_rco_slack(problem: BudgetProblem, objective: Objective, config: RcoConfig, alpha0=None,
                  oracle_value: float | None = None, return_logits: bool = False):
    """Inequality ``C(alpha) <= B`` via the slack-augmented manifold."""
    alpha0, grid = _prepare(problem, config, alpha0)
    rng = RngStream(config.seed)
    alpha, slack = mf.slack_retract(alpha0, problem, config.retraction_tol, config.bracket)
    state = config.adam(problem.num_groups * problem.num_options + 1)
    current = {"s": slack.s}

    def step_fn(a, tau):
        a, current["s"], record = rco_slack_step(a, current["s"], state, problem, objective,
                                                 config, rng, grid, tau)
        return a, record

    choices, trace, alpha = _drive("manifold-slack", problem, config, alpha, step_fn,
                                   _extractor(problem, config, grid), oracle_value,
                                   lambda p: greedy_repair(p, problem))
    trace.info["final_slack"] = current["s"]
    trace.info["adam_state"] = state
    return (choices, trace, alpha) if return_logits else (choices, trace)


def _single_problem(problem: BudgetProblem, constraints: ConstraintSet) -> BudgetProblem:
    return BudgetProblem(constraints.costs[0], problem.group_weights, float(constraints.budgets[0]),
                         values=problem.values, cost_scale=problem.cost_scale, meta=problem.meta)


def run_rco_multi(problem: BudgetProblem, constraints: ConstraintSet, objective: Objective,
                  config: RcoConfig, alpha0=None, oracle_value: float | None = None,
                  return_logits: bool = False):
    """Several simultaneous equality constraints.

    The Gram-system projection and the Newton shift retraction replace their
    scalar counterparts.  A single constraint falls back to the scalar path
    (bisection), so the trace then matches :func:`run_rco`.
    """
    constraints.validate(problem.group_weights)
    if constraints.slack_enabled:
        raise ValueError("multi mode takes equality constraints only")
    if constraints.q == 1:
        return run_rco(_single_problem(problem, constraints), objective, config, alpha0,
                       oracle_value, return_logits)
    alpha0, grid = _prepare(problem, config, alpha0)
    w = problem.group_weights
    rng = RngStream(config.seed)
    alpha, _ = mf.multi_retract_newton(alpha0, constraints, w, config.newton_tol,
                                       config.newton_max_iters)
    state = config.adam(problem.shape)

    def step_fn(a, tau):
        step = state.t + 1
        loss, g = objective_gradient(a, objective, problem, config, grid, tau, rng, step)
        g_tan = mf.multi_project(g, mf.multi_normals(a, constraints, w))
        a = adam_step(a, g_tan, state)
        a, iters = mf.multi_retract_newton(a, constraints, w, config.newton_tol,
                                           config.newton_max_iters)
        state.m = mf.multi_project(state.m, mf.multi_normals(a, constraints, w))
        resid = mf.multi_costs(a, constraints, w) - constraints.budgets
        record = StepRecord(step, loss, float(resid[0] + constraints.budgets[0]), float(resid[0]),
                            float(np.max(np.abs(resid))), iters, float(np.linalg.norm(g_tan)), tau,
                            constraint_violations=resid.tolist())
        return a, record

    def repair(p):
        return greedy_repair_multi(p, constraints, w)

    choices, trace, alpha = _drive("manifold-multi", problem, config, alpha, step_fn,
                                   lambda a: repair(softmax_rows(a)), oracle_value, repair)
    trace.info["adam_state"] = state
    return (choices, trace, alpha) if return_logits else (choices, trace)


def run(problem: BudgetProblem, objective: Objective, config: RcoConfig, alpha0=None,
        oracle_value: float | None = None, constraints: ConstraintSet | None = None):
    """Dispatch on ``config.mode``."""
    if config.mode == "slack":
        return run_rco_slack(problem, objective, config, alpha0, oracle_value)
    if config.mode == "multi":
        if constraints is None:
            constraints = ConstraintSet.from_problem(problem)
        return run_rco_multi(problem, constraints, objective, config, alpha0, oracle_value)
    return run_rco(problem, objective, config, alpha0, oracle_value)


StepFn = Callable[[np.ndarray, float], tuple[np.ndarray, StepRecord]]
