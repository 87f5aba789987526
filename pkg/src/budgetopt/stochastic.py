"""Gumbel perturbation, temperature annealing and straight-through gradients."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BudgetProblem, RngStream, softmax_rows
from .knapsack import IntegerCostGrid, dp_solve

UNIFORM_CLAMP = 1e-12


@dataclass(frozen=True)
class TemperatureSchedule:
    tau0: float = 1.0
    tau_min: float = 0.01
    total_steps: int = 1

    def __post_init__(self):
        if not (0 < self.tau_min <= self.tau0):
            raise ValueError("need 0 < tau_min <= tau0")

    def __call__(self, t: int) -> float:
        return temperature_at(self, t)


def temperature_at(schedule: TemperatureSchedule, t: int) -> float:
    """Exponential decay from ``tau0`` at t=0 to ``tau_min`` at t=T."""
    if schedule.total_steps <= 0:
        return schedule.tau0
    ratio = schedule.tau_min / schedule.tau0
    return max(schedule.tau_min, schedule.tau0 * ratio ** (t / schedule.total_steps))


class Objective:
    """Extension point for losses over discrete assignments.

    ``__call__(choices, p_hat)`` receives the hard assignment (length-N int
    array) and the soft probabilities at the perturbed logits, and returns
    ``(loss, dL/dp_hat)``.  The forward value is taken at ``choices`` and the
    gradient is taken with respect to ``p_hat`` (straight-through).  Both
    must be deterministic given the inputs.

    Objectives that also have a smooth relaxation implement ``relaxed(p)``
    with the same return convention; it is used by the ``relaxed`` gradient
    mode.
    """

    def __call__(self, choices: np.ndarray, p_hat: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def relaxed(self, p: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError(f"{type(self).__name__} has no relaxed form")


class LinearValueObjective(Objective):
    """Negative total value ``-sum_i v[i, z_i]``; the knapsack benchmark loss."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float64)

    def __call__(self, choices, p_hat):
        choices = np.asarray(choices, dtype=np.intp)
        loss = -float(self.values[np.arange(self.values.shape[0]), choices].sum())
        return loss, -self.values

    def relaxed(self, p):
        return -float(np.sum(p * self.values)), -self.values


def softmax_vjp(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    """Pull ``dL/dp`` back through a row-wise softmax evaluated at ``p``."""
    return p * (grad_p - np.sum(grad_p * p, axis=1, keepdims=True))


def gumbel_from_uniform(u) -> np.ndarray:
    u = np.clip(np.asarray(u, dtype=np.float64), UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
    return -np.log(-np.log(u))


def sample_gumbel(shape, rng: RngStream) -> np.ndarray:
    """Standard Gumbel draws ``-log(-log U)`` with U clamped away from 0 and 1."""
    return gumbel_from_uniform(rng.uniform(shape))


def perturb(alpha, noise, tau: float) -> np.ndarray:
    if not tau > 0:
        raise ValueError("temperature must be positive")
    return (np.asarray(alpha, dtype=np.float64) + noise) / tau


@dataclass(frozen=True)
class SteGradient:
    grad: np.ndarray
    samples: int


def _one_sample(alpha, noise, objective, grid, tau):
    scores = perturb(alpha, noise, tau)
    choices = dp_solve(scores, grid).choices
    p_hat = softmax_rows(scores)
    loss, grad_p = objective(choices, p_hat)
    return loss, softmax_vjp(p_hat, np.asarray(grad_p, dtype=np.float64)) / tau


def ste_gradient_from_noise(alpha, noise: Sequence[np.ndarray], objective: Objective,
                            grid: IntegerCostGrid, tau: float,
                            n_jobs: int | None = None) -> tuple[SteGradient, float]:
    """Average straight-through gradients over the given Gumbel draws.

    Accumulation follows sample order unless ``n_jobs > 1``, in which case
    samples run on a thread pool and are summed as they finish.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    total = np.zeros_like(alpha)
    loss_sum = 0.0
    if n_jobs is not None and n_jobs > 1 and len(noise) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(_one_sample, alpha, g, objective, grid, tau) for g in noise]
            for fut in as_completed(futures):
                loss, grad = fut.result()
                total += grad
                loss_sum += loss
    else:
        for g in noise:
            loss, grad = _one_sample(alpha, g, objective, grid, tau)
            total += grad
            loss_sum += loss
    n = len(noise)
    return SteGradient(total / n, n), loss_sum / n


def ste_gradient(alpha, objective: Objective, problem: BudgetProblem, grid: IntegerCostGrid,
                 tau: float, samples: int, rng: RngStream,
                 n_jobs: int | None = None) -> tuple[SteGradient, float]:
    """Gumbel-perturb, DP-solve and straight-through differentiate ``samples`` times.

    Each sample draws its noise from its own child of ``rng``.
    """
    if samples < 1:
        raise ValueError("need at least one Gumbel sample")
    shape = problem.shape
    noise = [sample_gumbel(shape, child) for child in rng.spawn(samples)]
    return ste_gradient_from_noise(alpha, noise, objective, grid, tau, n_jobs=n_jobs)
