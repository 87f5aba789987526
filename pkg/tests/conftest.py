import numpy as np
import pytest

from budgetopt.core import BudgetProblem

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def central_diff(f, x, h=1e-6):
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        grad[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return grad


def random_problem(rng, n_groups=None, n_options=None, integer=False, with_values=True):
    """Random valid problem; integer mode makes ``scale=1`` grids exact."""
    n = n_groups or int(rng.integers(1, 7))
    k = n_options or int(rng.integers(2, 6))
    if integer:
        costs = np.sort(rng.choice(np.arange(1, 10), size=k, replace=False)).astype(float)
        weights = rng.integers(1, 4, n).astype(float)
        lo, hi = weights.sum() * costs.min(), weights.sum() * costs.max()
        budget = np.floor(rng.uniform(lo, hi)) + 0.5
        budget = min(max(budget, lo + 0.5), hi - 0.5)
        scale = 1.0
    else:
        costs = rng.uniform(0.5, 5.0, k)
        weights = rng.uniform(0.2, 2.0, n)
        lo, hi = weights.sum() * costs.min(), weights.sum() * costs.max()
        budget = rng.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo))
        scale = None
    values = rng.uniform(0, 100, (n, k)) if with_values else None
    return BudgetProblem(costs, weights, budget, values=values, cost_scale=scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_problem():
    return BudgetProblem([1.0, 2.0, 4.0], [1.0, 0.5, 2.0, 1.5], 9.0,
                         values=np.arange(12, dtype=float).reshape(4, 3))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
