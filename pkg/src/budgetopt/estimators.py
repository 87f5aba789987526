"""scikit-learn style wrappers around the optimizers.

The estimators take a :class:`~budgetopt.core.BudgetProblem` where sklearn
would take ``X``; ``fit`` learns the logits and ``predict`` returns the
discrete assignment.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .baselines import run_baseline
from .core import BudgetProblem, ConstraintSet, assignment_value, softmax_rows
from .optim import RcoConfig, run_rco, run_rco_multi, run_rco_slack
from .stochastic import LinearValueObjective, Objective


def _objective(problem: BudgetProblem, objective: Objective | None) -> Objective:
    if objective is not None:
        return objective
    if problem.values is None:
        raise ValueError("pass an objective or a problem with a values matrix")
    return LinearValueObjective(problem.values)


class _AssignmentEstimator(BaseEstimator):
    def _config(self) -> RcoConfig:
        return RcoConfig(steps=self.steps, lr=self.lr, seed=self.seed, grad=self.grad,
                         gumbel_samples=self.gumbel_samples, tau0=self.tau0,
                         tau_min=self.tau_min, retraction_tol=self.retraction_tol,
                         bracket=self.bracket, extraction=self.extraction,
                         mode=getattr(self, "mode", "equality"))

    def predict(self, problem: BudgetProblem | None = None) -> np.ndarray:
        """Discrete assignment; ``problem`` must match the fitted one if given."""
        check_is_fitted(self, "assignment_")
        if problem is not None and problem.shape != self.logits_.shape:
            raise ValueError(f"problem shape {problem.shape} does not match fitted {self.logits_.shape}")
        return self.assignment_.copy()

    def predict_proba(self, problem: BudgetProblem | None = None) -> np.ndarray:
        check_is_fitted(self, "logits_")
        return softmax_rows(self.logits_)

    def score(self, problem: BudgetProblem, y=None) -> float:
        """Total value of the fitted assignment on ``problem.values``."""
        check_is_fitted(self, "assignment_")
        if problem.values is None:
            raise ValueError("problem has no values matrix")
        return assignment_value(self.assignment_, problem.values)

    def _store(self, result, oracle_value):
        choices, trace, alpha = result
        self.assignment_ = np.asarray(choices)
        self.logits_ = alpha
        self.trace_ = trace
        self.n_steps_ = len(trace.records)
        if oracle_value is not None:
            self.gap_pct_ = trace.final_gap_pct
        return self


class BudgetManifoldOptimizer(_AssignmentEstimator):
    """Adam constrained to the budget level set (``mode="equality"``) or to
    the under-budget region via a slack coordinate (``mode="slack"``).

    Parameters
    ----------
    steps : int, default=5000
    lr : float, default=0.01
    mode : {"equality", "slack"}, default="equality"
    grad : {"relaxed", "ste"}, default="relaxed"
        Analytic gradient of the softmax-relaxed objective, or the
        Gumbel straight-through estimate through the knapsack DP.
    gumbel_samples : int, default=1
    tau0, tau_min : float
        Temperature schedule endpoints for ``grad="ste"``.
    retraction_tol : float, default=1e-8
    bracket : float, default=50.0
    extraction : {"greedy", "dp"}, default="greedy"
    seed : int, default=0

    Attributes
    ----------
    logits_ : ndarray of shape (N, K)
    assignment_ : ndarray of shape (N,)
    trace_ : RunTrace
    """

    def __init__(self, steps=5000, lr=0.01, mode="equality", grad="relaxed", gumbel_samples=1,
                 tau0=1.0, tau_min=0.01, retraction_tol=1e-8, bracket=50.0, extraction="greedy",
                 seed=0):
        self.steps = steps
        self.lr = lr
        self.mode = mode
        self.grad = grad
        self.gumbel_samples = gumbel_samples
        self.tau0 = tau0
        self.tau_min = tau_min
        self.retraction_tol = retraction_tol
        self.bracket = bracket
        self.extraction = extraction
        self.seed = seed

    def fit(self, problem: BudgetProblem, objective: Objective | None = None, alpha0=None,
            oracle_value: float | None = None):
        if self.mode not in ("equality", "slack"):
            raise ValueError("mode must be 'equality' or 'slack'; use MultiConstraintOptimizer")
        runner = run_rco_slack if self.mode == "slack" else run_rco
        result = runner(problem, _objective(problem, objective), self._config(), alpha0,
                        oracle_value, return_logits=True)
        return self._store(result, oracle_value)


class LagrangianOptimizer(_AssignmentEstimator):
    """Penalty baseline: quadratic penalty (``method="lagrangian"``) or
    augmented Lagrangian (``method="augmented"``) on the same Adam loop.
    """

    def __init__(self, method="lagrangian", lam=10.0, steps=5000, lr=0.01, grad="relaxed",
                 gumbel_samples=1, tau0=1.0, tau_min=0.01, extraction="greedy", seed=0):
        self.method = method
        self.lam = lam
        self.steps = steps
        self.lr = lr
        self.grad = grad
        self.gumbel_samples = gumbel_samples
        self.tau0 = tau0
        self.tau_min = tau_min
        self.extraction = extraction
        self.seed = seed

    retraction_tol = 1e-8
    bracket = 50.0

    def fit(self, problem: BudgetProblem, objective: Objective | None = None, alpha0=None,
            oracle_value: float | None = None):
        result = run_baseline(problem, _objective(problem, objective), self.method, self._config(),
                              alpha0, oracle_value, lam=self.lam, return_logits=True)
        return self._store(result, oracle_value)


class MultiConstraintOptimizer(_AssignmentEstimator):
    """Adam on the intersection of several budget level sets."""

    def __init__(self, steps=2000, lr=0.01, grad="relaxed", gumbel_samples=1, tau0=1.0,
                 tau_min=0.01, newton_tol=1e-12, seed=0):
        self.steps = steps
        self.lr = lr
        self.grad = grad
        self.gumbel_samples = gumbel_samples
        self.tau0 = tau0
        self.tau_min = tau_min
        self.newton_tol = newton_tol
        self.seed = seed

    retraction_tol = 1e-8
    bracket = 50.0
    extraction = "greedy"

    def fit(self, problem: BudgetProblem, constraints: ConstraintSet | None = None,
            objective: Objective | None = None, alpha0=None, oracle_value: float | None = None):
        if constraints is None:
            constraints = ConstraintSet.from_problem(problem)
        config = self._config()
        config.mode = "multi"
        config.newton_tol = self.newton_tol
        self.constraints_ = constraints
        result = run_rco_multi(problem, constraints, _objective(problem, objective), config,
                               alpha0, oracle_value, return_logits=True)
        return self._store(result, oracle_value)


__all__ = ["BudgetManifoldOptimizer", "LagrangianOptimizer", "MultiConstraintOptimizer",
           "NotFittedError"]
