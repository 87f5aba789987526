"""Geometry of the expected-cost level set in logit space.

The expected cost of logits ``alpha`` (N x K) is
``C(alpha) = sum_i w_i <softmax(alpha_i), c>``.  Its gradient has the closed
form ``w_i p_ik (c_k - E_{p_i}[c])`` and shifting every row by ``t * c``
changes ``C`` strictly monotonically, which is what makes the retraction a
scalar bisection.  All routines use the Euclidean ambient metric.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .core import BudgetOptError, BudgetProblem, ConstraintSet, softmax_rows

logger = logging.getLogger(__name__)

ZERO_NORMAL_THRESHOLD = 1e-300
DEFAULT_TOL = 1e-8
DEFAULT_BRACKET = 50.0
MAX_BRACKET = 1600.0
MAX_BISECTIONS = 100
GRAM_COND_LIMIT = 1e12
NEWTON_HALVINGS = 8


class ZeroNormal(BudgetOptError):
    pass


class BracketExhausted(BudgetOptError):
    pass


class DependentNormals(BudgetOptError):
    pass


class NewtonDiverged(BudgetOptError):
    pass


@dataclass(frozen=True)
class Normal:
    """Constraint gradient at a point together with its squared norm."""

    vector: np.ndarray
    sq_norm: float

    @classmethod
    def from_vector(cls, vector: np.ndarray) -> "Normal":
        vector = np.asarray(vector, dtype=np.float64)
        return cls(vector, float(np.vdot(vector, vector)))


@dataclass(frozen=True)
class RetractionReport:
    shift: float
    iterations: int
    residual: float
    evaluations: int = 0


@dataclass(frozen=True)
class SlackState:
    s: float
    iterations: int = 0


def _as_vector(normal) -> Normal:
    return normal if isinstance(normal, Normal) else Normal.from_vector(normal)


def _cost(alpha: np.ndarray, costs: np.ndarray, weights: np.ndarray) -> float:
    p = softmax_rows(alpha)
    return float(weights @ (p @ costs))


def _shifted_cost(alpha, costs, weights, t: float) -> float:
    return _cost(alpha + t * costs, costs, weights)


def expected_cost(alpha, problem: BudgetProblem) -> float:
    """Total expected cost ``sum_i w_i <softmax(alpha_i), c>``."""
    return _cost(np.asarray(alpha, dtype=np.float64), problem.option_costs, problem.group_weights)


def _normal_from_probs(p: np.ndarray, costs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    mean = p @ costs
    return weights[:, None] * p * (costs[None, :] - mean[:, None])


def constraint_normal(alpha, problem: BudgetProblem) -> Normal:
    p = softmax_rows(alpha)
    return Normal.from_vector(_normal_from_probs(p, problem.option_costs, problem.group_weights))


def tangent_project(g, normal) -> np.ndarray:
    """Remove the component of ``g`` along ``normal``.

    Returns ``g - (<g, n> / |n|^2) n``.  Raises :class:`ZeroNormal` when the
    normal has (numerically) vanished.
    """
    n = _as_vector(normal)
    if n.sq_norm < ZERO_NORMAL_THRESHOLD:
        raise ZeroNormal(f"normal squared norm {n.sq_norm:.3g} is below {ZERO_NORMAL_THRESHOLD:g}")
    g = np.asarray(g, dtype=np.float64)
    coef = float(np.vdot(g, n.vector)) / n.sq_norm
    return g - coef * n.vector


def transport(m, normal_new) -> np.ndarray:
    """Vector transport by projection onto the tangent plane at the new point."""
    return tangent_project(m, normal_new)


def retraction_derivative(alpha, problem: BudgetProblem, t: float = 0.0) -> float:
    """d/dt C(alpha + t c) = sum_i w_i Var_{p_i(t)}[c]."""
    c = problem.option_costs
    p = softmax_rows(np.asarray(alpha, dtype=np.float64) + t * c)
    mean = p @ c
    var = p @ (c * c) - mean * mean
    # the two-moment formula cancels badly when a row saturates
    var = np.where(var > 0, var, ((c[None, :] - mean[:, None]) ** 2 * p).sum(axis=1))
    return float(problem.group_weights @ var)


def _retract_scalar(alpha, costs, weights, target, tol, bracket, stop="cost",
                    max_iter=MAX_BISECTIONS, max_bracket=MAX_BRACKET):
    alpha = np.asarray(alpha, dtype=np.float64)
    r0 = _cost(alpha, costs, weights) - target
    evaluations = 1
    if stop == "cost" and abs(r0) <= tol:
        return alpha.copy(), RetractionReport(0.0, 0, abs(r0), evaluations)

    half = float(bracket)
    # the root lies on the side of 0 indicated by the sign of r0
    while True:
        edge = half if r0 < 0 else -half
        r_edge = _shifted_cost(alpha, costs, weights, edge) - target
        evaluations += 1
        if (r0 < 0) != (r_edge < 0) or r_edge == 0:
            break
        if half >= max_bracket:
            raise BracketExhausted(
                f"no sign change within shift bracket +/-{half:g}; budget is outside the reachable range"
            )
        half *= 2.0

    lo, hi = -half, half
    # first halving reuses the evaluation at t = 0
    if r0 < 0:
        lo = 0.0
    else:
        hi = 0.0
    iterations = 1
    best_t, best_r = 0.0, r0

    if stop == "t":
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            r = _shifted_cost(alpha, costs, weights, mid) - target
            evaluations += 1
            iterations += 1
            if r < 0:
                lo = mid
            else:
                hi = mid
        best_t = 0.5 * (lo + hi)
        best_r = _shifted_cost(alpha, costs, weights, best_t) - target
        evaluations += 1
    else:
        while iterations < max_iter:
            mid = 0.5 * (lo + hi)
            if mid == lo or mid == hi:
                break
            r = _shifted_cost(alpha, costs, weights, mid) - target
            evaluations += 1
            iterations += 1
            if abs(r) < abs(best_r):
                best_t, best_r = mid, r
            if abs(r) <= tol:
                break
            if r < 0:
                lo = mid
            else:
                hi = mid
        if abs(best_r) > tol:
            logger.warning("retraction stopped at residual %.3g > tol %.3g after %d bisections",
                           abs(best_r), tol, iterations)

    return alpha + best_t * costs, RetractionReport(best_t, iterations, abs(best_r), evaluations)


def retract_binary(alpha, problem: BudgetProblem, tol: float = DEFAULT_TOL,
                   bracket: float = DEFAULT_BRACKET, stop: str = "cost",
                   max_iter: int = MAX_BISECTIONS, max_bracket: float = MAX_BRACKET):
    """Shift logits along the cost vector until the expected cost hits the budget.

    Parameters
    ----------
    alpha : ndarray, shape (N, K)
        Logits, possibly off the level set.
    problem : BudgetProblem
    tol : float
        With ``stop="cost"`` the search ends once ``|C - B| <= tol``; with
        ``stop="t"`` it ends once the shift bracket is narrower than ``tol``,
        which takes exactly ``ceil(log2(2 * bracket / tol))`` halvings.
    bracket : float
        Half-width of the initial shift bracket ``[-bracket, bracket]``.
        It is doubled up to ``max_bracket`` if the root lies outside.

    Returns
    -------
    alpha_new : ndarray, shape (N, K)
        ``alpha + t* c`` broadcast over groups.
    report : RetractionReport
    """
    if stop not in ("cost", "t"):
        raise ValueError("stop must be 'cost' or 't'")
    return _retract_scalar(alpha, problem.option_costs, problem.group_weights, problem.budget,
                           tol, bracket, stop=stop, max_iter=max_iter, max_bracket=max_bracket)


def slack_project(g, normal, s: float, g_s: float = 0.0) -> tuple[np.ndarray, float]:
    """Tangent projection for the augmented constraint ``C(alpha) + s^2 = B``.

    The augmented normal is ``(grad C, 2 s)``.  Returns the logit block and
    the slack component of the projected vector.
    """
    n = _as_vector(normal)
    g = np.asarray(g, dtype=np.float64)
    denom = n.sq_norm + 4.0 * s * s
    if denom < ZERO_NORMAL_THRESHOLD:
        raise ZeroNormal("augmented normal vanished")
    coef = (float(np.vdot(g, n.vector)) + 2.0 * s * g_s) / denom
    return g - coef * n.vector, g_s - coef * 2.0 * s


def slack_retract(alpha, problem: BudgetProblem, tol: float = DEFAULT_TOL,
                  bracket: float = DEFAULT_BRACKET) -> tuple[np.ndarray, SlackState]:
    """Restore ``C(alpha) + s^2 = B``.

    Over budget: bisect back to ``C = B`` and set ``s = 0``.  Otherwise keep
    ``alpha`` and absorb the surplus in ``s = sqrt(B - C)``.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    cost = expected_cost(alpha, problem)
    if cost > problem.budget:
        new_alpha, report = retract_binary(alpha, problem, tol=tol, bracket=bracket)
        return new_alpha, SlackState(0.0, report.iterations)
    return alpha.copy(), SlackState(math.sqrt(problem.budget - cost), 0)


def multi_costs(alpha, constraints: ConstraintSet, weights) -> np.ndarray:
    p = softmax_rows(alpha)
    return (np.asarray(weights) @ p) @ constraints.costs.T


def multi_normals(alpha, constraints: ConstraintSet, weights) -> list[Normal]:
    p = softmax_rows(alpha)
    w = np.asarray(weights, dtype=np.float64)
    return [Normal.from_vector(_normal_from_probs(p, constraints.costs[j], w))
            for j in range(constraints.q)]


def multi_project(g, normals: Sequence) -> np.ndarray:
    """Project ``g`` onto the joint tangent space ``{xi : N^T xi = 0}``.

    Computes ``g - N (N^T N)^{-1} N^T g`` with a Cholesky solve of the q x q
    Gram system.  A single normal reduces to :func:`tangent_project`.
    """
    normals = [_as_vector(n) for n in normals]
    if len(normals) == 1:
        return tangent_project(g, normals[0])
    g = np.asarray(g, dtype=np.float64)
    mat = np.stack([n.vector.ravel() for n in normals], axis=1)
    gram = mat.T @ mat
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > GRAM_COND_LIMIT:
        raise DependentNormals(f"Gram matrix condition number {cond:.3g} exceeds {GRAM_COND_LIMIT:g}")
    coef = scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram), mat.T @ g.ravel())
    return g - (mat @ coef).reshape(g.shape)


def constraint_jacobian(alpha, constraints: ConstraintSet, weights) -> np.ndarray:
    """J[j, l] = sum_i w_i Cov_{p_i}[c^(j), c^(l)]."""
    p = softmax_rows(alpha)
    w = np.asarray(weights, dtype=np.float64)
    cm = constraints.costs
    means = p @ cm.T
    pbar = w @ p
    return (cm * pbar) @ cm.T - (means * w[:, None]).T @ means


def multi_retract_newton(alpha, constraints: ConstraintSet, weights, tol: float = 1e-12,
                         max_iters: int = 20) -> tuple[np.ndarray, int]:
    """Newton root-finding for the shift vector ``t`` with
    ``C_j(alpha + sum_l t_l c^(l)) = b_j`` for every constraint.

    A full step that does not reduce the residual norm is halved up to eight
    times; failing that, or running out of iterations, raises
    :class:`NewtonDiverged`.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    cm, b = constraints.costs, constraints.budgets
    resid = multi_costs(alpha, constraints, w) - b
    if np.max(np.abs(resid)) <= tol:
        return alpha.copy(), 0
    current = alpha
    for it in range(1, max_iters + 1):
        jac = constraint_jacobian(current, constraints, w)
        try:
            delta = np.linalg.solve(jac, -resid)
        except np.linalg.LinAlgError:
            raise NewtonDiverged("singular constraint Jacobian") from None
        norm = np.linalg.norm(resid)
        step = 1.0
        for _ in range(NEWTON_HALVINGS + 1):
            trial = current + (step * delta) @ cm
            trial_resid = multi_costs(trial, constraints, w) - b
            if np.linalg.norm(trial_resid) < norm:
                break
            step *= 0.5
        else:
            raise NewtonDiverged(f"residual {norm:.3g} not reduced after {NEWTON_HALVINGS} halvings")
        current, resid = trial, trial_resid
        if np.max(np.abs(resid)) <= tol:
            return current, it
    raise NewtonDiverged(f"residual {np.max(np.abs(resid)):.3g} above tol after {max_iters} iterations")
