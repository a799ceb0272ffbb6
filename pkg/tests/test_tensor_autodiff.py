"""
Tests for the autodiff engine: forward values, backward rules checked
against central finite differences, and the optimizers.
"""

import math

import numpy as np
import pytest

from src.autodiff import functional as F
from src.autodiff.gradcheck import numeric_gradient, relative_error
from src.autodiff.optim import SGD, Adam, AdamState, CosineSchedule, adam_step, clip_grad_norm
from src.autodiff.tensor import Parameter, Tensor, backward
from src.errors import NumericalError, ShapeError

TOLERANCE = 1e-5


def check_gradients(loss_fn, params, tolerance=TOLERANCE):
    """Compare autodiff gradients of loss_fn() with finite differences for every param."""
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    for p in params:
        numeric = numeric_gradient(lambda: loss_fn().item(), p.data, h=1e-5)
        error = relative_error(p.grad, numeric)
        assert error < tolerance, f"{p.identifier}: relative error {error:.3e}"


# ==================== Forward values ====================

def test_conv_of_ones_sums_the_window():
    x = Tensor(np.ones((1, 1, 3, 3)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    out = F.conv2d(x, w, padding=1)
    assert out.shape == (1, 1, 3, 3)
    assert out.data[0, 0, 1, 1] == 9.0
    assert out.data[0, 0, 0, 0] == 4.0


def test_conv_identity_kernel_returns_input(rng):
    x = rng.normal(size=(2, 1, 5, 5))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    out = F.conv2d(Tensor(x), Tensor(w), padding=1)
    np.testing.assert_allclose(out.data, x)


def test_conv_output_size_arithmetic():
    assert F.conv_output_size(16, 5, stride=2, padding=4, dilation=2) == 8
    assert F.conv_output_size(7, 1, stride=2) == 4
    assert F.conv_output_size(8, 3, stride=1, padding=1) == 8


def test_conv_rejects_channel_mismatch():
    with pytest.raises(ShapeError, match="dim 1"):
        F.conv2d(Tensor(np.ones((1, 3, 4, 4))), Tensor(np.ones((2, 2, 1, 1))))


def test_softmax_of_equal_logits_is_uniform():
    out = F.softmax(Tensor(np.zeros(3)))
    np.testing.assert_allclose(out.data, np.full(3, 1 / 3))


def test_log_softmax_is_stable_for_large_logits():
    out = F.log_softmax(Tensor(np.array([[1000.0, 1000.0]])), axis=1)
    np.testing.assert_allclose(out.data, np.log([[0.5, 0.5]]))


def test_masked_softmax_zeroes_dead_entries():
    mask = np.array([[True, False], [True, True]])
    weights = F.masked_softmax_array(np.zeros((2, 2)), mask, axis=None)
    np.testing.assert_allclose(weights, [[1 / 3, 0.0], [1 / 3, 1 / 3]])


def test_masked_softmax_rejects_non_finite_alive_logits():
    with pytest.raises(NumericalError):
        F.masked_softmax_array(np.array([0.0, np.nan]), None, axis=None)


def test_cross_entropy_of_uniform_prediction_is_log_classes():
    loss = F.cross_entropy(Tensor(np.zeros((5, 4))), np.array([0, 1, 2, 3, 0]))
    assert loss.item() == pytest.approx(math.log(4), abs=1e-12)


def test_cross_entropy_rejects_out_of_range_labels():
    with pytest.raises(ValueError):
        F.cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


def test_cross_entropy_flags_non_finite_logits():
    with pytest.raises(NumericalError):
        F.cross_entropy(Tensor(np.array([[0.0, np.inf]])), np.array([0]))


def test_concat_relu_and_pool():
    a, b = Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 4, 4)))
    assert F.concat([a, b], axis=1).shape == (1, 5, 4, 4)
    np.testing.assert_array_equal(F.relu(Tensor(np.array([-1.0, 2.0]))).data, [0.0, 2.0])
    pooled = F.global_avg_pool(Tensor(np.full((2, 3, 4, 4), 2.5)))
    np.testing.assert_allclose(pooled.data, np.full((2, 3), 2.5))


def test_xlogx_is_zero_at_zero():
    out = F.xlogx(Tensor(np.array([0.0, 1.0, 0.5])))
    np.testing.assert_allclose(out.data, [0.0, 0.0, 0.5 * math.log(0.5)])


# ==================== Backward ====================

def test_sum_of_parameter_has_unit_gradient():
    p = Parameter(np.arange(6.0).reshape(2, 3), "p")
    backward(p.sum())
    np.testing.assert_array_equal(p.grad, np.ones((2, 3)))


def test_square_gradient():
    x = Parameter(np.array(3.0), "x")
    backward(x * x)
    assert x.grad == pytest.approx(6.0)


def test_gradients_accumulate_over_reuse_and_repeated_backward():
    x = Parameter(np.array([2.0]), "x")
    y = x * x + x          # dy/dx = 2x + 1 = 5
    backward(y.sum())
    assert x.grad[0] == pytest.approx(5.0)
    backward((x * 3.0).sum())
    assert x.grad[0] == pytest.approx(8.0)


def test_backward_requires_scalar_root():
    p = Parameter(np.ones(3), "p")
    with pytest.raises(ShapeError):
        backward(p * 2.0)


@pytest.mark.parametrize("stride,padding,dilation,groups", [
    (1, 1, 1, 1),
    (2, 1, 1, 1),
    (1, 4, 2, 2),
    (2, 2, 1, 2),
])
def test_conv_gradients(rng, stride, padding, dilation, groups):
    x = Parameter(rng.normal(size=(1, 2, 5, 5)), "x")
    kernel = 5 if dilation == 2 else 3
    w = Parameter(rng.normal(size=(2, 2 // groups, kernel, kernel)), "w")
    upstream = rng.normal(size=F.conv2d(x, w, stride, padding, dilation, groups).shape)

    def loss():
        out = F.conv2d(x, w, stride=stride, padding=padding, dilation=dilation, groups=groups)
        return F.sum_all(out * upstream)

    check_gradients(loss, [x, w], tolerance=1e-6)


def test_cross_entropy_gradient_is_softmax_minus_onehot(rng):
    logits = Parameter(rng.normal(size=(3, 4)), "logits")
    labels = np.array([0, 3, 1])
    backward(F.cross_entropy(logits, labels))
    probs = np.exp(logits.data) / np.exp(logits.data).sum(axis=1, keepdims=True)
    expected = (probs - np.eye(4)[labels]) / 3
    np.testing.assert_allclose(logits.grad, expected, atol=1e-12)
    numeric = numeric_gradient(lambda: F.cross_entropy(logits, labels).item(), logits.data, h=1e-5)
    assert relative_error(logits.grad, numeric) < 1e-6


def test_log_softmax_gradient(rng):
    logits = Parameter(rng.normal(size=(3, 4)), "logits")
    upstream = Tensor(rng.normal(size=(3, 4)))
    check_gradients(lambda: F.sum_all(F.log_softmax(logits, axis=1) * upstream), [logits])


def test_label_smoothing_gradient(rng):
    logits = Parameter(rng.normal(size=(4, 3)), "logits")
    labels = np.array([0, 1, 2, 1])
    check_gradients(lambda: F.cross_entropy(logits, labels, label_smoothing=0.1), [logits])


def test_masked_softmax_and_entropy_kernel_gradients(rng):
    alpha = Parameter(rng.normal(size=(3, 2)), "alpha")
    mask = np.array([[True, True], [False, True], [True, False]])
    upstream = rng.normal(size=(3, 2))

    def node_loss():
        weights = F.masked_softmax(alpha, mask=mask, axis=None)
        return F.sum_all(F.xlogx(weights)) + F.sum_all(weights * upstream)

    def edge_loss():
        return F.sum_all(F.masked_softmax(alpha, mask=mask, axis=1) * upstream)

    check_gradients(node_loss, [alpha])
    check_gradients(edge_loss, [alpha])


def test_layer_gradients(rng):
    x = Parameter(rng.normal(size=(2, 3, 4, 4)), "x")
    gain = Parameter(rng.normal(size=3), "gain")
    bias = Parameter(rng.normal(size=3), "bias")
    other = Parameter(rng.normal(size=(2, 2, 4, 4)), "other")
    weight = Parameter(rng.normal(size=(4, 5)), "weight")
    lin_bias = Parameter(rng.normal(size=4), "lin_bias")
    coeffs = Parameter(rng.normal(size=3), "coeffs")
    labels = np.array([1, 3])

    def loss():
        normed = F.affine_channel_norm(x, gain, bias)
        joined = F.concat([F.relu(normed), other], axis=1)
        pooled = F.global_avg_pool(joined)
        mixed = F.weighted_sum(F.take(coeffs, [0, 2]), [pooled, pooled * pooled])
        total = F.add_n([mixed, pooled])
        return F.cross_entropy(F.linear(total, weight, lin_bias), labels)

    check_gradients(loss, [x, gain, bias, other, weight, lin_bias, coeffs])


def test_small_network_gradients(rng):
    """conv → relu → pool → linear → CE on a 2-sample batch."""
    images = Tensor(rng.normal(size=(2, 1, 5, 5)))
    conv = Parameter(rng.normal(size=(3, 1, 3, 3)), "conv")
    weight = Parameter(rng.normal(size=(2, 3)), "weight")
    bias = Parameter(rng.normal(size=2), "bias")
    labels = np.array([0, 1])

    def loss():
        hidden = F.relu(F.conv2d(images, conv, padding=1))
        return F.cross_entropy(F.linear(F.global_avg_pool(hidden), weight, bias), labels)

    check_gradients(loss, [conv, weight, bias])


def test_mac_counter_counts_conv_and_linear():
    x = Tensor(np.ones((4, 2, 6, 6)))
    w = Tensor(np.ones((3, 2, 3, 3)))
    with F.count_macs() as counter:
        out = F.conv2d(x, w, padding=1)
        F.linear(F.global_avg_pool(out), Tensor(np.ones((5, 3))), Tensor(np.zeros(5)))
    assert counter.total == 3 * 2 * 9 * 36 + 5 * 3
    assert [kind for kind, _ in counter.records] == ["conv2d", "linear"]


# ==================== Optimizers ====================

def test_adam_first_step_moves_by_lr_times_sign():
    p = Parameter(np.array([1.0, -2.0, 0.5]), "p")
    grad = np.array([0.3, -4.0, 1e-3])
    adam_step([p], [grad], AdamState(), lr=0.01)
    np.testing.assert_allclose(p.data, [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01], atol=1e-6)


def test_adam_zero_gradient_leaves_parameters_unchanged():
    p = Parameter(np.array([1.0, 2.0]), "p")
    adam_step([p], [np.zeros(2)], AdamState(), lr=0.1)
    np.testing.assert_array_equal(p.data, [1.0, 2.0])


def test_adam_descends_a_parabola():
    x = Parameter(np.array([1.0]), "x")
    opt = Adam([x], lr=0.1)
    previous = float(x.data[0] ** 2)
    for _ in range(10):
        opt.zero_grad()
        backward((x * x).sum())
        opt.step()
        current = float(x.data[0] ** 2)
        assert current < previous
        previous = current


def test_adam_state_survives_export_and_reload():
    p = Parameter(np.array([1.0, -1.0]), "p")
    opt = Adam([p], lr=0.05)
    for _ in range(3):
        opt.zero_grad()
        backward((p * p).sum())
        opt.step()
    arrays = opt.state_arrays("opt")
    fresh = Adam([p], lr=0.05)
    fresh.load_state_arrays(arrays, "opt")
    np.testing.assert_array_equal(fresh.state.m["p"], opt.state.m["p"])
    assert fresh.state.steps["p"] == 3


def test_adam_step_geometry_reproduces_the_update():
    p = Parameter(np.array([1.0, -1.0, 0.3]), "p")
    opt = Adam([p], lr=0.05)
    gradient, metric = opt.step_geometry(p)
    assert not gradient.any() and not metric.any()
    for grad in ([0.2, -0.5, 0.01], [0.1, 0.4, -0.02], [0.3, -0.1, 0.05]):
        before = p.data.copy()
        p.grad = np.array(grad)
        opt.step()
        gradient, metric = opt.step_geometry(p)
        np.testing.assert_allclose(before - p.data, 0.05 * metric * gradient, rtol=1e-12)
    # the effective gradient carries the momentum of earlier steps
    assert not np.allclose(gradient, [0.3, -0.1, 0.05])


def test_sgd_momentum_accumulates():
    p = Parameter(np.array([0.0]), "p")
    opt = SGD([p], lr=1.0, momentum=0.5)
    for _ in range(2):
        p.grad = np.array([1.0])
        opt.step()
    # buffer: 1, then 0.5·1 + 1 = 1.5
    assert p.data[0] == pytest.approx(-2.5)


def test_cosine_schedule_endpoints():
    schedule = CosineSchedule(0.1, total_steps=10)
    assert schedule.lr_at(0) == pytest.approx(0.1)
    assert schedule.lr_at(5) == pytest.approx(0.05)
    assert schedule.lr_at(10) == 0.0
    warm = CosineSchedule(0.1, total_steps=10, warmup_steps=2)
    assert warm.lr_at(0) == pytest.approx(0.05)
    assert warm.lr_at(2) == pytest.approx(0.1)


def test_clip_grad_norm_returns_pre_clip_norm():
    a, b = Parameter(np.zeros(1), "a"), Parameter(np.zeros(1), "b")
    a.grad, b.grad = np.array([3.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    assert math.hypot(a.grad[0], b.grad[0]) == pytest.approx(1.0, rel=1e-5)
