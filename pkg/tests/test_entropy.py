"""
Tests for the sparsity entropy, its closed-form gradient, the ΔE budget
and the λ formulas.
"""

import math

import numpy as np
import pytest

from src.analysis.entropy import (
    cell_entropy,
    cell_entropy_tensor,
    entropy_grad_analytic,
    entropy_snapshot,
    entropy_upper_bound,
    expected_entropy_reduction,
    flatten_cell,
    lambda_exact,
    lambda_lower_bound,
    node_entropy,
    total_entropy,
)
from src.autodiff import functional as F
from src.autodiff.tensor import backward
from src.search_space.supernet import ArchParams, node_weight_matrix

UNIFORM_CELL_ENTROPY = math.log(6) + math.log(9) + math.log(12)


# ==================== Node and cell entropy ====================

def test_node_entropy_examples():
    assert node_entropy(np.full(6, 1 / 6)) == pytest.approx(1.791759, abs=1e-6)
    assert node_entropy([0.0, 1.0, 0.0]) == 0.0
    assert node_entropy([0.9, 0.1]) == pytest.approx(0.325083, abs=1e-6)
    assert node_entropy({(1, 0): 0.5, (2, 1): 0.5}) == pytest.approx(math.log(2))


def test_node_entropy_rejects_bad_weights():
    with pytest.raises(ValueError, match="negative"):
        node_entropy([1.2, -0.2])
    with pytest.raises(ValueError, match="sum to 1"):
        node_entropy([0.5, 0.4])


def test_entropy_bounds_on_random_distributions(rng):
    for _ in range(10000):
        size = int(rng.integers(2, 13))
        weights = rng.dirichlet(np.full(size, rng.uniform(0.05, 3.0)))
        weights /= weights.sum()
        h = node_entropy(weights)
        assert -1e-12 <= h <= math.log(size) + 1e-12


def test_entropy_extremes_only_at_uniform_and_one_hot(rng):
    weights = rng.dirichlet(np.ones(5))
    assert 0.0 < node_entropy(weights) < math.log(5) - 1e-9


def test_uniform_cell_entropy():
    arch = ArchParams(12, 6, 3)
    assert cell_entropy(arch, 1) == pytest.approx(6.47390, abs=1e-5)
    assert cell_entropy(arch, 1) == pytest.approx(UNIFORM_CELL_ENTROPY, abs=1e-12)
    assert total_entropy(arch) == pytest.approx(12 * UNIFORM_CELL_ENTROPY, abs=1e-9)
    snapshot = entropy_snapshot(arch, step=3)
    assert snapshot.step == 3 and snapshot.total == pytest.approx(total_entropy(arch))


def test_one_hot_node_has_zero_entropy():
    arch = ArchParams(3, 4, 3)
    for k in arch.cells():
        arch.alive[(k, 3)][:] = False
        arch.alive[(k, 3)][1, 2] = True
    assert total_entropy(arch) == 0.0


def test_pruning_lowers_the_entropy_bound():
    arch = ArchParams(3, 5, 3)
    before = entropy_upper_bound(arch, 2)
    assert before == pytest.approx(math.log(6) + math.log(9))
    arch.alive[(2, 4)][0, 0] = False
    assert entropy_upper_bound(arch, 2) < before
    assert cell_entropy(arch, 2) <= entropy_upper_bound(arch, 2) + 1e-12


# ==================== Gradient ====================

def test_uniform_weights_have_zero_gradient():
    arch = ArchParams(3, 6, 3)
    for grad in entropy_grad_analytic(arch, 1).values():
        np.testing.assert_allclose(grad, 0.0, atol=1e-15)


def test_two_entry_gradient_example():
    arch = ArchParams(3, 4, 1)
    # softmax(α) = (0.9, 0.1)
    arch.alpha[(1, 3)].data = np.array([[math.log(9.0)], [0.0]])
    np.testing.assert_allclose(node_weight_matrix(arch, 1, 3).ravel(), [0.9, 0.1])
    grad = entropy_grad_analytic(arch, 1)[3].ravel()
    assert grad[0] == pytest.approx(-0.9 * (math.log(0.9) + 0.325083), abs=1e-6)
    assert grad.sum() == pytest.approx(0.0, abs=1e-15)


def test_analytic_gradient_matches_autodiff(rng):
    arch = ArchParams(3, 6, 3)
    for draw in range(1000):
        scale = 20.0 if draw % 4 == 0 else 2.0     # every fourth draw is near one-hot
        for key in arch.keys():
            arch.alpha[key].data = rng.normal(scale=scale, size=arch.alpha[key].shape)
            mask = rng.random(arch.alive[key].shape) > 0.3
            mask.flat[rng.integers(mask.size)] = True
            arch.alive[key] = mask
        k = int(rng.integers(1, 4))
        arch.zero_grad()
        backward(cell_entropy_tensor(arch, k))
        analytic = entropy_grad_analytic(arch, k)
        for j in arch.nodes_of(k):
            np.testing.assert_allclose(arch.alpha[(k, j)].grad, analytic[j], rtol=0, atol=1e-9)
            assert np.all(analytic[j][~arch.alive[(k, j)]] == 0.0)


def test_entropy_tensor_matches_float_entropy(rng):
    arch = ArchParams(3, 5, 2)
    for key in arch.keys():
        arch.alpha[key].data = rng.normal(size=arch.alpha[key].shape)
    assert cell_entropy_tensor(arch, 2).item() == pytest.approx(cell_entropy(arch, 2), abs=1e-12)


# ==================== ΔE and λ ====================

def test_expected_entropy_reduction():
    delta_e = expected_entropy_reduction(12 * 6.47390, 12, 100, 16, 5)
    assert delta_e == pytest.approx(8.0924e-4, abs=1e-8)
    assert expected_entropy_reduction(0.0, 12, 100, 16, 5) == 0.0
    assert expected_entropy_reduction(10.0, 3, 10, 4, 4) == pytest.approx(
        expected_entropy_reduction(10.0, 3, 10, 4, 2) / 2)


@pytest.mark.parametrize("counts", [(0, 100, 16, 5), (12, 0, 16, 5), (12, 100, 0, 5), (12, 100, 16, 0)])
def test_expected_entropy_reduction_rejects_zero_counts(counts):
    with pytest.raises(ValueError):
        expected_entropy_reduction(1.0, *counts)


def test_lambda_exact_closed_forms():
    grad_h = np.array([3.0, 0.0])
    assert lambda_exact(0.09, 0.01, grad_h, np.array([0.0, 5.0])) == pytest.approx(1.0)
    grad_ce = np.array([2.0, 1.0])
    delta_e = 0.01 * float(grad_h @ grad_ce)
    assert lambda_exact(delta_e, 0.01, grad_h, grad_ce) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        lambda_exact(0.1, 0.01, np.zeros(2), grad_ce)


def test_lambda_lower_bound():
    assert lambda_lower_bound(np.array([1.0, 0.0]), np.array([-2.0, 3.0])) == pytest.approx(2.0)
    assert math.isinf(lambda_lower_bound(np.zeros(3), np.ones(3)))


def test_preconditioned_bound_separates_entropy_decrease_from_increase(rng):
    """A small step −η·P·(∇CE + λ∇H) lowers H exactly when λ clears the metric bound."""
    eta = 1e-5
    arch = ArchParams(3, 4, 3)
    key = (1, 3)
    arch.alpha[key].data = rng.normal(scale=0.7, size=(2, 3))
    start = arch.alpha[key].data.copy()
    grad_h = flatten_cell(entropy_grad_analytic(arch, 1))
    grad_ce = rng.normal(scale=0.05, size=6)
    metric = rng.uniform(0.2, 5.0, size=6)
    bound = lambda_lower_bound(grad_h, grad_ce, metric)
    assert bound != pytest.approx(lambda_lower_bound(grad_h, grad_ce))

    before = cell_entropy(arch, 1)
    for lam, sign in ((bound + 0.5 * abs(bound) + 1e-3, -1.0), (bound - 0.5 * abs(bound) - 1e-3, 1.0)):
        arch.alpha[key].data = start - eta * (metric * (grad_ce + lam * grad_h)).reshape(2, 3)
        assert np.sign(cell_entropy(arch, 1) - before) == sign
    np.testing.assert_allclose(lambda_lower_bound(grad_h, grad_ce, np.ones(6)),
                               lambda_lower_bound(grad_h, grad_ce))


def test_one_step_with_exact_lambda_reduces_entropy_by_budget(rng):
    """First-order prediction: one plain gradient step with λ = lambda_exact lowers H by ΔE."""
    eta = 1e-3
    arch = ArchParams(3, 4, 5)           # node 3 carries 2 × 5 = 10 entries
    key = (1, 3)
    arch.alpha[key].data = rng.normal(scale=0.5, size=(2, 5))
    grad_ce = rng.normal(scale=0.03, size=10)
    grad_h = flatten_cell(entropy_grad_analytic(arch, 1))
    delta_e = 2.0 * eta * np.linalg.norm(grad_h) * np.linalg.norm(grad_ce)

    lam = lambda_exact(delta_e, eta, grad_h, grad_ce)
    before = cell_entropy(arch, 1)
    arch.alpha[key].data = arch.alpha[key].data - eta * (grad_ce + lam * grad_h).reshape(2, 5)
    reduction = before - cell_entropy(arch, 1)
    assert reduction == pytest.approx(delta_e, rel=0.05)


def test_masked_softmax_weights_feed_entropy_consistently(rng):
    arch = ArchParams(3, 4, 3)
    arch.alpha[(1, 3)].data = rng.normal(size=(2, 3))
    arch.alive[(1, 3)][0, 2] = False
    weights = F.masked_softmax_array(arch.alpha[(1, 3)].data, arch.alive[(1, 3)], axis=None)
    assert cell_entropy(arch, 1) == pytest.approx(node_entropy(weights.ravel()))
