import numpy as np
import pytest
from conftest import central_diff, random_problem

from budgetopt.core import RngStream, softmax_rows
from budgetopt.knapsack import dp_solve, quantize_costs
from budgetopt.stochastic import (LinearValueObjective, Objective, TemperatureSchedule,
                                  gumbel_from_uniform, perturb, sample_gumbel, softmax_vjp,
                                  ste_gradient, ste_gradient_from_noise, temperature_at)

EULER_GAMMA = 0.5772156649


def test_schedule_endpoints_and_floor():
    sched = TemperatureSchedule(1.0, 0.01, 100)
    assert sched(0) == 1.0
    assert sched(100) == pytest.approx(0.01)
    assert sched(50) == pytest.approx(0.1)
    assert sched(1000) == 0.01
    assert temperature_at(TemperatureSchedule(2.0, 0.5, 0), 10) == 2.0
    with pytest.raises(ValueError):
        TemperatureSchedule(0.1, 1.0, 10)


def test_gumbel_moments():
    g = sample_gumbel((200_000,), RngStream(3))
    assert g.mean() == pytest.approx(EULER_GAMMA, abs=0.01)
    assert g.var() == pytest.approx(np.pi ** 2 / 6, abs=0.03)


def test_gumbel_clamps_extremes():
    g = gumbel_from_uniform([0.0, 1.0])
    assert np.all(np.isfinite(g))


def test_perturb_rejects_bad_temperature():
    with pytest.raises(ValueError):
        perturb(np.zeros((1, 2)), np.zeros((1, 2)), 0.0)


def test_softmax_vjp_matches_finite_differences(rng):
    for _ in range(10):
        alpha = rng.normal(size=(4, 5))
        v = rng.normal(size=(4, 5))
        fd = central_diff(lambda a: float(np.sum(softmax_rows(a) * v)), alpha)
        np.testing.assert_allclose(softmax_vjp(softmax_rows(alpha), v), fd, rtol=1e-6, atol=1e-10)


def test_single_sample_gradient_is_gradient_of_perturbed_surrogate(rng):
    problem = random_problem(rng, 4, 4, integer=True)
    grid = quantize_costs(problem)
    obj = LinearValueObjective(problem.values)
    noise = rng.gumbel(size=problem.shape)
    alpha, tau = rng.normal(size=problem.shape), 0.7
    ste, loss = ste_gradient_from_noise(alpha, [noise], obj, grid, tau)
    surrogate = lambda a: -float(np.sum(problem.values * softmax_rows((a + noise) / tau)))  # noqa: E731
    np.testing.assert_allclose(ste.grad, central_diff(surrogate, alpha), rtol=1e-5, atol=1e-8)
    z = dp_solve((alpha + noise) / tau, grid).choices
    assert loss == -problem.values[np.arange(4), z].sum()


def test_ste_gradient_deterministic_and_sample_count(rng):
    problem = random_problem(rng, 5, 3, integer=True)
    grid = quantize_costs(problem)
    obj = LinearValueObjective(problem.values)
    alpha = rng.normal(size=problem.shape)
    a, _ = ste_gradient(alpha, obj, problem, grid, 0.5, 4, RngStream(9))
    b, _ = ste_gradient(alpha, obj, problem, grid, 0.5, 4, RngStream(9))
    np.testing.assert_array_equal(a.grad, b.grad)
    assert a.samples == 4
    with pytest.raises(ValueError):
        ste_gradient(alpha, obj, problem, grid, 0.5, 0, RngStream(9))


def test_parallel_samples_agree_with_sequential(rng):
    problem = random_problem(rng, 5, 3, integer=True)
    grid = quantize_costs(problem)
    obj = LinearValueObjective(problem.values)
    alpha = rng.normal(size=problem.shape)
    seq, _ = ste_gradient(alpha, obj, problem, grid, 0.5, 6, RngStream(1))
    par, _ = ste_gradient(alpha, obj, problem, grid, 0.5, 6, RngStream(1), n_jobs=3)
    np.testing.assert_allclose(par.grad, seq.grad, rtol=1e-13, atol=1e-15)


def test_objective_base_class_requires_override():
    with pytest.raises(NotImplementedError):
        Objective()(np.zeros(2, dtype=int), np.zeros((2, 2)))
    with pytest.raises(NotImplementedError):
        Objective().relaxed(np.zeros((2, 2)))
