"""Exact budget-constrained optimization of discrete assignments on the softmax budget manifold."""
from .core import (BudgetOptError, BudgetProblem, ConstraintSet, DegenerateCosts, InfeasibleBudget,
                   InvalidProblem, NonPositiveWeight, RngStream, validate_problem)
from .knapsack import dp_solve, greedy_repair, quantize_costs, solve_oracle
from .manifold import (constraint_normal, expected_cost, retract_binary, slack_project,
                       slack_retract, tangent_project)
from .optim import RcoConfig, RunTrace, StepRecord, run_rco, run_rco_multi, run_rco_slack
from .stochastic import LinearValueObjective, Objective, TemperatureSchedule

__version__ = "0.1.0"

__all__ = [
    "BudgetOptError", "BudgetProblem", "ConstraintSet", "DegenerateCosts", "InfeasibleBudget",
    "InvalidProblem", "NonPositiveWeight", "RngStream", "validate_problem",
    "dp_solve", "greedy_repair", "quantize_costs", "solve_oracle",
    "constraint_normal", "expected_cost", "retract_binary", "slack_project", "slack_retract",
    "tangent_project",
    "RcoConfig", "RunTrace", "StepRecord", "run_rco", "run_rco_multi", "run_rco_slack",
    "LinearValueObjective", "Objective", "TemperatureSchedule",
]
