"""
Functional Operations Module
Differentiable operations on Tensors, each with a forward and backward rule.

Covers exactly what the search and evaluation networks need: elementwise
arithmetic, reductions, (masked) softmax and cross-entropy, the entropy
kernel x·log(x), ReLU, grouped/dilated 2-D convolution, linear layers,
global average pooling, channel concatenation and per-channel affine norm.

Shapes follow NCHW for feature maps.
"""

import logging
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.autodiff.tensor import Function, Tensor
from src.errors import NumericalError, ShapeError

logger = logging.getLogger(__name__)


# ==================== Multiply-accumulate instrumentation ====================

@dataclass
class MacCounter:
    """Per-sample multiply-accumulate counts recorded by conv2d and linear."""
    total: int = 0
    records: List[Tuple[str, int]] = field(default_factory=list)

    def add(self, kind: str, macs: int):
        self.total += macs
        self.records.append((kind, macs))


_active_counter: ContextVar[Optional[MacCounter]] = ContextVar("fxdarts_mac_counter", default=None)


@contextmanager
def count_macs() -> Iterator[MacCounter]:
    """
    Count multiply-accumulates of every conv2d/linear executed in the block.

    Counts are per sample (the batch dimension is factored out).

    Example:
        with count_macs() as counter:
            net.forward(x)
        flops = 2 * counter.total
    """
    counter = MacCounter()
    token = _active_counter.set(counter)
    try:
        yield counter
    finally:
        _active_counter.reset(token)


def _record_macs(kind: str, macs: int):
    counter = _active_counter.get()
    if counter is not None:
        counter.add(kind, macs)


def conv_output_size(size: int, kernel: int, stride: int = 1, padding: int = 0, dilation: int = 1) -> int:
    """floor((size + 2·padding − dilation·(kernel − 1) − 1) / stride) + 1"""
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


# ==================== Elementwise arithmetic ====================

class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return (self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(grad, self.shapes[1]))


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        grad_a = self.unbroadcast(grad * self.b, self.a.shape) if self.needs_input_grad[0] else None
        grad_b = self.unbroadcast(grad * self.a, self.b.shape) if self.needs_input_grad[1] else None
        return grad_a, grad_b


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class SumAll(Function):
    def forward(self, a):
        self.shape = a.shape
        return np.asarray(a.sum())

    def backward(self, grad):
        return (np.full(self.shape, float(grad)),)


class Take(Function):
    """Gather entries of the flattened input at the given positions."""

    def forward(self, a, indices):
        self.shape = a.shape
        self.indices = np.asarray(indices, dtype=np.int64)
        return a.reshape(-1)[self.indices]

    def backward(self, grad):
        out = np.zeros(int(np.prod(self.shape)))
        np.add.at(out, self.indices, grad)
        return (out.reshape(self.shape),)


class AddN(Function):
    """Plain sum of equally shaped tensors."""

    def forward(self, *arrays):
        shape = arrays[0].shape
        for position, array in enumerate(arrays):
            if array.shape != shape:
                raise ShapeError(f"add_n operand {position} has shape {array.shape}, expected {shape}")
        return np.sum(arrays, axis=0)

    def backward(self, grad):
        return tuple(grad if needed else None for needed in self.needs_input_grad)


class WeightedSum(Function):
    """out = Σ_m weights[m] · x_m for a 1-D weight vector and equally shaped x_m."""

    def forward(self, weights, *arrays):
        if weights.ndim != 1 or weights.shape[0] != len(arrays):
            raise ShapeError(
                f"weighted_sum needs one weight per operand: got {weights.shape[0] if weights.ndim else 0} "
                f"weights for {len(arrays)} operands"
            )
        shape = arrays[0].shape
        for position, array in enumerate(arrays):
            if array.shape != shape:
                raise ShapeError(f"weighted_sum operand {position} has shape {array.shape}, expected {shape}")
        self.weights, self.arrays = weights, arrays
        out = np.zeros(shape)
        for w, array in zip(weights, arrays):
            out += w * array
        return out

    def backward(self, grad):
        grad_weights = None
        if self.needs_input_grad[0]:
            grad_weights = np.array([np.sum(grad * array) for array in self.arrays])
        grads = [grad_weights]
        for w, needed in zip(self.weights, self.needs_input_grad[1:]):
            grads.append(w * grad if needed else None)
        return tuple(grads)


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(a, b)


def neg(a: Tensor) -> Tensor:
    return Neg.apply(a)


def sum_all(a: Tensor) -> Tensor:
    return SumAll.apply(a)


def take(a: Tensor, indices: Sequence[int]) -> Tensor:
    return Take.apply(a, indices=indices)


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("add_n needs at least one operand")
    if len(tensors) == 1:
        return tensors[0]
    return AddN.apply(*tensors)


def weighted_sum(weights: Tensor, tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("weighted_sum needs at least one operand")
    return WeightedSum.apply(weights, *tensors)


# ==================== Softmax family ====================

def masked_softmax_array(x: np.ndarray, mask: Optional[np.ndarray] = None, axis: Optional[int] = None) -> np.ndarray:
    """
    Softmax of x over `axis` (None = all entries jointly) restricted to mask.

    Entries outside the mask get weight 0. A slice with no alive entry is
    all zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    if not np.all(np.isfinite(x[mask])):
        raise NumericalError("softmax received non-finite logits")
    shifted = np.where(mask, x, -np.inf)
    peak = np.max(shifted, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    exp = np.where(mask, np.exp(np.where(mask, x, 0.0) - peak), 0.0)
    total = np.sum(exp, axis=axis, keepdims=True)
    return np.divide(exp, total, out=np.zeros_like(exp), where=total > 0)


class MaskedSoftmax(Function):
    def forward(self, x, mask=None, axis=None):
        self.axis = axis
        self.out = masked_softmax_array(x, mask, axis)
        return self.out

    def backward(self, grad):
        y = self.out
        inner = np.sum(grad * y, axis=self.axis, keepdims=True)
        return (y * (grad - inner),)


class LogSoftmax(Function):
    def forward(self, x, axis=-1):
        if not np.all(np.isfinite(x)):
            raise NumericalError("log_softmax received non-finite logits")
        self.axis = axis
        shifted = x - np.max(x, axis=axis, keepdims=True)
        out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
        self.softmax = np.exp(out)
        return out

    def backward(self, grad):
        return (grad - self.softmax * np.sum(grad, axis=self.axis, keepdims=True),)


class CrossEntropy(Function):
    """Mean over the batch of −Σ target · log softmax(logits)."""

    def forward(self, logits, labels=None, label_smoothing=0.0):
        if logits.ndim != 2:
            raise ShapeError(f"cross_entropy expects (batch, classes) logits, got shape {logits.shape}")
        if not np.all(np.isfinite(logits)):
            raise NumericalError("cross_entropy received non-finite logits (numerical blow-up)")
        batch, classes = logits.shape
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (batch,):
            raise ShapeError(f"labels shape {labels.shape} does not match batch size {batch}")
        if labels.size and (labels.min() < 0 or labels.max() >= classes):
            raise ValueError(f"labels must lie in [0, {classes})")

        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        target = np.full((batch, classes), label_smoothing / classes)
        target[np.arange(batch), labels] += 1.0 - label_smoothing

        self.probs = np.exp(log_probs)
        self.target = target
        self.batch = batch
        return np.asarray(-np.sum(target * log_probs) / batch)

    def backward(self, grad):
        return (float(grad) * (self.probs - self.target) / self.batch,)


def masked_softmax(x: Tensor, mask: Optional[np.ndarray] = None, axis: Optional[int] = None) -> Tensor:
    return MaskedSoftmax.apply(x, mask=mask, axis=axis)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return MaskedSoftmax.apply(x, mask=None, axis=axis)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(x, axis=axis)


def cross_entropy(logits: Tensor, labels: np.ndarray, label_smoothing: float = 0.0) -> Tensor:
    return CrossEntropy.apply(logits, labels=labels, label_smoothing=label_smoothing)


class XLogX(Function):
    """x·log(x) with the continuous extension 0·log 0 = 0."""

    def forward(self, x):
        if np.any(x < 0):
            raise ValueError("xlogx is undefined for negative inputs")
        self.x = x
        positive = x > 0
        return np.where(positive, x * np.log(np.where(positive, x, 1.0)), 0.0)

    def backward(self, grad):
        positive = self.x > 0
        return (grad * np.where(positive, np.log(np.where(positive, self.x, 1.0)) + 1.0, 0.0),)


def xlogx(x: Tensor) -> Tensor:
    return XLogX.apply(x)


# ==================== Network layers ====================

class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad):
        return (grad * self.mask,)


class Conv2d(Function):
    """
    Grouped, strided, dilated 2-D cross-correlation without bias.

    Weight layout is (out_channels, in_channels / groups, K_h, K_w). The
    forward pass gathers one strided view per kernel offset (im2col) and
    contracts it with einsum; backward scatters the column gradient back
    through the same views.
    """

    def forward(self, x, weight, stride=1, padding=0, dilation=1, groups=1):
        if x.ndim != 4:
            raise ShapeError(f"conv2d input must be NCHW (4 dims), got {x.ndim} dims")
        if weight.ndim != 4:
            raise ShapeError(f"conv2d weight must have 4 dims, got {weight.ndim}")
        if stride < 1 or dilation < 1 or padding < 0 or groups < 1:
            raise ShapeError(
                f"conv2d needs stride>=1, dilation>=1, padding>=0, groups>=1 "
                f"(got stride={stride}, dilation={dilation}, padding={padding}, groups={groups})"
            )
        n, c, h, w = x.shape
        oc, cg, kh, kw = weight.shape
        if c % groups != 0:
            raise ShapeError(f"conv2d input channels (dim 1) = {c} not divisible by groups={groups}")
        if oc % groups != 0:
            raise ShapeError(f"conv2d output channels (weight dim 0) = {oc} not divisible by groups={groups}")
        if c // groups != cg:
            raise ShapeError(
                f"conv2d input channels (dim 1) = {c} do not match weight dim 1 = {cg} × groups={groups}"
            )
        oh = conv_output_size(h, kh, stride, padding, dilation)
        ow = conv_output_size(w, kw, stride, padding, dilation)
        if oh <= 0:
            raise ShapeError(f"conv2d output height (dim 2) would be {oh} for input height {h}")
        if ow <= 0:
            raise ShapeError(f"conv2d output width (dim 3) would be {ow} for input width {w}")

        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        cols = np.empty((n, c, kh, kw, oh, ow))
        for i in range(kh):
            for j in range(kw):
                hs, ws = i * dilation, j * dilation
                cols[:, :, i, j] = xp[:, :, hs:hs + stride * (oh - 1) + 1:stride, ws:ws + stride * (ow - 1) + 1:stride]

        cols = cols.reshape(n, groups, cg, kh, kw, oh, ow)
        weight_g = weight.reshape(groups, oc // groups, cg, kh, kw)
        out = np.einsum("ngcklhw,gockl->ngohw", cols, weight_g, optimize=True)

        self.cols, self.weight_g = cols, weight_g
        self.geometry = (x.shape, weight.shape, stride, padding, dilation, groups, oh, ow)
        _record_macs("conv2d", oc * cg * kh * kw * oh * ow)
        return out.reshape(n, oc, oh, ow)

    def backward(self, grad):
        (n, c, h, w), weight_shape, stride, padding, dilation, groups, oh, ow = self.geometry
        oc, cg, kh, kw = weight_shape
        grad_g = grad.reshape(n, groups, oc // groups, oh, ow)

        grad_weight = None
        if self.needs_input_grad[1]:
            grad_weight = np.einsum("ngcklhw,ngohw->gockl", self.cols, grad_g, optimize=True).reshape(weight_shape)

        grad_x = None
        if self.needs_input_grad[0]:
            grad_cols = np.einsum("gockl,ngohw->ngcklhw", self.weight_g, grad_g, optimize=True)
            grad_cols = grad_cols.reshape(n, c, kh, kw, oh, ow)
            grad_xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
            for i in range(kh):
                for j in range(kw):
                    hs, ws = i * dilation, j * dilation
                    grad_xp[:, :, hs:hs + stride * (oh - 1) + 1:stride, ws:ws + stride * (ow - 1) + 1:stride] += grad_cols[:, :, i, j]
            grad_x = grad_xp[:, :, padding:padding + h, padding:padding + w]
        return grad_x, grad_weight


class Linear(Function):
    def forward(self, x, weight, bias):
        if x.ndim != 2:
            raise ShapeError(f"linear input must be (batch, features), got shape {x.shape}")
        if weight.ndim != 2 or weight.shape[1] != x.shape[1]:
            raise ShapeError(f"linear weight shape {weight.shape} does not match input features (dim 1) = {x.shape[1]}")
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear bias shape {bias.shape} does not match output features {weight.shape[0]}")
        self.x, self.weight = x, weight
        _record_macs("linear", weight.shape[0] * weight.shape[1])
        return x @ weight.T + bias

    def backward(self, grad):
        grad_x = grad @ self.weight if self.needs_input_grad[0] else None
        grad_w = grad.T @ self.x if self.needs_input_grad[1] else None
        grad_b = grad.sum(axis=0) if self.needs_input_grad[2] else None
        return grad_x, grad_w, grad_b


class GlobalAvgPool(Function):
    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"global_avg_pool input must be NCHW, got {x.ndim} dims")
        self.shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        n, c, h, w = self.shape
        return (np.broadcast_to(grad[:, :, None, None] / (h * w), self.shape).copy(),)


class Concat(Function):
    def forward(self, *arrays, axis=1):
        reference = arrays[0].shape
        for position, array in enumerate(arrays):
            if array.ndim != len(reference):
                raise ShapeError(f"concat operand {position} has {array.ndim} dims, expected {len(reference)}")
            for dim, (size, ref) in enumerate(zip(array.shape, reference)):
                if dim != axis and size != ref:
                    raise ShapeError(f"concat operand {position} has size {size} in dim {dim}, expected {ref}")
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


class AffineChannelNorm(Function):
    """y = gain[c] · x + bias[c] per channel, without batch statistics."""

    def forward(self, x, gain, bias):
        if x.ndim != 4:
            raise ShapeError(f"affine_channel_norm input must be NCHW, got {x.ndim} dims")
        c = x.shape[1]
        if gain.shape != (c,) or bias.shape != (c,):
            raise ShapeError(f"affine_channel_norm gain/bias must have shape ({c},), got {gain.shape}/{bias.shape}")
        self.x, self.gain = x, gain
        return x * gain[None, :, None, None] + bias[None, :, None, None]

    def backward(self, grad):
        grad_x = grad * self.gain[None, :, None, None] if self.needs_input_grad[0] else None
        grad_gain = np.sum(grad * self.x, axis=(0, 2, 3)) if self.needs_input_grad[1] else None
        grad_bias = np.sum(grad, axis=(0, 2, 3)) if self.needs_input_grad[2] else None
        return grad_x, grad_gain, grad_bias


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0, dilation: int = 1, groups: int = 1) -> Tensor:
    return Conv2d.apply(x, weight, stride=stride, padding=padding, dilation=dilation, groups=groups)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return Linear.apply(x, weight, bias)


def global_avg_pool(x: Tensor) -> Tensor:
    return GlobalAvgPool.apply(x)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one operand")
    if len(tensors) == 1:
        return tensors[0]
    return Concat.apply(*tensors, axis=axis)


def affine_channel_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    return AffineChannelNorm.apply(x, gain, bias)
