"""Method dispatch and benchmark sweeps shared by the CLI and the acceptance tests."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from .baselines import LAMBDA_GRID, run_baseline, tune_lambda
from .core import BudgetOptError, BudgetProblem
from .optim import RcoConfig, RunTrace, run_rco, run_rco_slack
from .scenarios import ScenarioSpec, generate
from .stochastic import LinearValueObjective

logger = logging.getLogger(__name__)

METHODS = ("manifold", "manifold-slack", "lagrangian", "augmented")
TUNING_SEED_OFFSET = 1000


def expand_methods(method: str) -> tuple[str, ...]:
    if method == "all":
        return METHODS
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS + ('all',)}")
    return (method,)


def oracle_value(problem: BudgetProblem) -> float:
    contracts = problem.meta.get("contracts") or {}
    if "oracle_value" in contracts:
        return float(contracts["oracle_value"])
    from .knapsack import solve_oracle
    return solve_oracle(problem).score


def run_method(problem: BudgetProblem, method: str, config: RcoConfig, lam: float = 10.0,
               oracle: float | None = None):
    """Run one method on the knapsack benchmark objective; returns ``(choices, trace)``."""
    objective = LinearValueObjective(problem.values)
    if oracle is None:
        oracle = oracle_value(problem)
    if method == "manifold":
        return run_rco(problem, objective, replace(config, mode="equality"), oracle_value=oracle)
    if method == "manifold-slack":
        return run_rco_slack(problem, objective, replace(config, mode="slack"), oracle_value=oracle)
    if method in ("lagrangian", "augmented"):
        return run_baseline(problem, objective, method, config, oracle_value=oracle, lam=lam)
    raise ValueError(f"unknown method {method!r}")


def tuned_lambda(family: str, seed: int, config: RcoConfig) -> tuple[float, dict]:
    """Penalty weight chosen on the held-out instance ``seed + TUNING_SEED_OFFSET``."""
    held_out = generate(ScenarioSpec(family, seed + TUNING_SEED_OFFSET))
    cfg = replace(config, seed=seed + TUNING_SEED_OFFSET, gap_every=0)
    lam, table = tune_lambda(held_out, LinearValueObjective(held_out.values), cfg,
                             oracle_value(held_out), grid=LAMBDA_GRID)
    logger.info("%s: tuned lambda %g from %s", family, lam, table)
    return lam, table


@dataclass(frozen=True)
class BenchJob:
    family: str
    method: str
    seed: int
    config: RcoConfig
    lam: float = 10.0


@dataclass
class BenchResult:
    job: BenchJob
    trace: RunTrace | None
    error: str | None = None


def run_job(job: BenchJob) -> BenchResult:
    try:
        problem = generate(ScenarioSpec(job.family, job.seed))
        _, trace = run_method(problem, job.method, replace(job.config, seed=job.seed), job.lam)
        trace.info.pop("adam_state", None)
        trace.info.pop("penalty_state", None)
        return BenchResult(job, trace)
    except (BudgetOptError, ValueError, FloatingPointError) as exc:
        logger.error("%s/%s seed %d failed: %s", job.family, job.method, job.seed, exc)
        return BenchResult(job, None, f"{type(exc).__name__}: {exc}")


def run_jobs(jobs: list[BenchJob], n_jobs: int = 1) -> list[BenchResult]:
    """Run jobs in order, or on ``n_jobs`` processes; results keep job order."""
    if n_jobs <= 1 or len(jobs) <= 1:
        return [run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(run_job, jobs))
