"""
Optimizers Module
Adam (search), SGD with momentum (evaluation), cosine learning-rate
schedule and global-norm gradient clipping.

Optimizer state is keyed by parameter identifier so it can be written to
and restored from checkpoints.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.autodiff.tensor import Parameter
from src.errors import ShapeError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """First/second moments and per-parameter step counts."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    steps: Dict[str, int] = field(default_factory=dict)
    step: int = 0

    def reset(self):
        self.m.clear()
        self.v.clear()
        self.steps.clear()
        self.step = 0


def adam_step(
    params: Sequence[Parameter],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
):
    """
    Apply one Adam update in place.

    weight_decay is added to the gradient (L2 penalty, as PyTorch's Adam
    does). Parameters whose gradient is None are skipped entirely.

    Raises:
        ShapeError: If a gradient or stored moment does not match its parameter
    """
    state.step += 1
    for param, grad in zip(params, grads):
        if grad is None:
            continue
        key = param.identifier
        if grad.shape != param.shape:
            raise ShapeError(f"gradient for {key} has shape {grad.shape}, expected {param.shape}")
        m = state.m.setdefault(key, np.zeros_like(param.data))
        v = state.v.setdefault(key, np.zeros_like(param.data))
        if m.shape != param.shape or v.shape != param.shape:
            raise ShapeError(f"Adam state for {key} has shape {m.shape}, expected {param.shape}")

        g = grad + weight_decay * param.data if weight_decay else grad
        t = state.steps.get(key, 0) + 1
        state.steps[key] = t
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        param.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam over a fixed list of parameters, reading their `.grad`."""

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params: List[Parameter] = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamState()

    def zero_grad(self):
        for param in self.params:
            param.zero_grad()

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr,
                  self.beta1, self.beta2, self.eps, self.weight_decay)

    def reset(self):
        """Forget all moments (used when parameters are reinitialized)."""
        self.state.reset()

    def step_geometry(self, param: Parameter) -> Tuple[np.ndarray, np.ndarray]:
        """
        Decompose the last update of `param` as lr · metric · gradient.

        Returns:
            (gradient, metric): the effective gradient m / (1 − β1), i.e. the
            current gradient plus the carried momentum, and the diagonal
            metric (1 − β1) / (1 − β1^t) / (sqrt(v̂) + eps). Zeros before the
            parameter's first update.
        """
        key = param.identifier
        t = self.state.steps.get(key, 0)
        if t == 0:
            return np.zeros_like(param.data), np.zeros_like(param.data)
        v_hat = self.state.v[key] / (1.0 - self.beta2 ** t)
        metric = (1.0 - self.beta1) / (1.0 - self.beta1 ** t) / (np.sqrt(v_hat) + self.eps)
        return self.state.m[key] / (1.0 - self.beta1), metric

    def state_arrays(self, prefix: str) -> Dict[str, np.ndarray]:
        arrays = {}
        for key, value in self.state.m.items():
            arrays[f"{prefix}/m/{key}"] = value
        for key, value in self.state.v.items():
            arrays[f"{prefix}/v/{key}"] = value
        arrays[f"{prefix}/steps"] = np.array(
            [self.state.step] + [self.state.steps.get(p.identifier, 0) for p in self.params], dtype=np.int64
        )
        return arrays

    def load_state_arrays(self, arrays: Dict[str, np.ndarray], prefix: str):
        self.state.reset()
        shapes = {p.identifier: p.shape for p in self.params}
        for name, value in arrays.items():
            for moment, target in (("m", self.state.m), ("v", self.state.v)):
                head = f"{prefix}/{moment}/"
                if name.startswith(head):
                    key = name[len(head):]
                    if key in shapes and value.shape != shapes[key]:
                        raise ShapeError(f"stored Adam {moment} for {key} has shape {value.shape}, expected {shapes[key]}")
                    target[key] = np.array(value, dtype=np.float64)
        steps = arrays.get(f"{prefix}/steps")
        if steps is not None:
            self.state.step = int(steps[0])
            for param, count in zip(self.params, steps[1:]):
                if count:
                    self.state.steps[param.identifier] = int(count)


class SGD:
    """SGD with heavy-ball momentum and L2 weight decay."""

    def __init__(self, params: Iterable[Parameter], lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params: List[Parameter] = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers: Dict[str, np.ndarray] = {}

    def zero_grad(self):
        for param in self.params:
            param.zero_grad()

    def step(self):
        for param in self.params:
            if param.grad is None:
                continue
            grad = param.grad + self.weight_decay * param.data if self.weight_decay else param.grad
            buffer = self.buffers.get(param.identifier)
            if buffer is None:
                buffer = grad.copy()
                self.buffers[param.identifier] = buffer
            else:
                buffer *= self.momentum
                buffer += grad
            param.data -= self.lr * buffer


class CosineSchedule:
    """
    Cosine decay from base_lr to exactly zero at total_steps, with an
    optional linear warm-up over the first warmup_steps.
    """

    def __init__(self, base_lr: float, total_steps: int, warmup_steps: int = 0):
        if total_steps <= 0:
            raise ValueError("total_steps must be positive")
        self.base_lr = base_lr
        self.total_steps = total_steps
        self.warmup_steps = min(warmup_steps, total_steps)

    def lr_at(self, step: int) -> float:
        if step >= self.total_steps:
            return 0.0
        if step < self.warmup_steps:
            return self.base_lr * (step + 1) / self.warmup_steps
        span = self.total_steps - self.warmup_steps
        progress = (step - self.warmup_steps) / span
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """
    Rescale gradients in place so their global L2 norm is at most max_norm.

    Returns:
        The global norm before clipping
    """
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-6)
        for param in params:
            if param.grad is not None:
                param.grad = param.grad * scale
    return total
