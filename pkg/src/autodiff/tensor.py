"""
Tensor Module
Dense double-precision tensors with define-by-run reverse-mode differentiation.

Every differentiable operation is a `Function` subclass (see functional.py).
Applying a function to tensors that require gradients links the output back
to the function, so the graph of a forward pass is recorded as it runs.
`backward()` turns that graph into a `Tape` (the executed operations in
topological order) and walks it in reverse, accumulating gradients.

There is no global tape: each forward pass owns its graph, so independent
forward/backward passes can run on separate threads.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement `forward` on raw arrays and `backward`, which maps
    the gradient w.r.t. the output to one gradient (or None) per input.
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs
        # Backward rules may skip work for inputs that don't need a gradient
        self.needs_input_grad = tuple(t.requires_grad for t in inputs)

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward rule")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward rule")

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs) -> "Tensor":
        """
        Run the forward pass and link the result into the graph.

        Args:
            *inputs: Input tensors
            **kwargs: Non-differentiable arguments forwarded to `forward`

        Returns:
            Output tensor; it only records its creator when some input
            requires a gradient
        """
        func = cls(*inputs)
        out_data = func.forward(*(t.data for t in inputs), **kwargs)
        requires_grad = any(func.needs_input_grad)
        return Tensor(out_data, requires_grad=requires_grad, creator=func if requires_grad else None)

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        """Sum out broadcast dimensions so that grad matches shape."""
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for dim, size in enumerate(shape):
            if size == 1 and grad.shape[dim] != 1:
                grad = grad.sum(axis=dim, keepdims=True)
        return grad.reshape(shape)


class Tensor:
    """
    A dense array of doubles plus the bookkeeping needed for backprop.

    Attributes:
        data: The values, always float64
        requires_grad: Whether gradients flow into this tensor
        grad: Accumulated gradient (same shape as data) or None
        creator: The Function that produced this tensor, None for leaves
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False, creator: Optional[Function] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.creator = creator

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray):
        """Add grad into self.grad (never overwrites)."""
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.data.shape:
            grad = grad.reshape(self.data.shape)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    def backward(self):
        backward(self)

    # ==================== Operator sugar ====================

    def __add__(self, other):
        from src.autodiff import functional as F
        return F.add(self, as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        from src.autodiff import functional as F
        return F.mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        from src.autodiff import functional as F
        return F.neg(self)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def sum(self) -> "Tensor":
        from src.autodiff import functional as F
        return F.sum_all(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class Parameter(Tensor):
    """
    A trainable leaf tensor with a unique dotted identifier, e.g.
    ``cell3.edge1_4.sep3.dw`` or ``alpha.cell2.node3``.
    """

    def __init__(self, data: ArrayLike, identifier: str):
        super().__init__(np.array(data, dtype=np.float64, copy=True), requires_grad=True)
        self.identifier = identifier

    def __repr__(self) -> str:
        return f"Parameter({self.identifier!r}, shape={self.shape})"


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class TapeEntry:
    function: Function
    output: Tensor


class Tape:
    """
    Ordered record of the operations a root tensor depends on.

    Entries are in topological order (inputs before the operations that
    consume them) and each operation appears exactly once.
    """

    def __init__(self, entries: List[TapeEntry]):
        self.entries = entries

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order: List[TapeEntry] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            tensor, expanded = stack.pop()
            if tensor.creator is None:
                continue
            if expanded:
                order.append(TapeEntry(tensor.creator, tensor))
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            for parent in tensor.creator.inputs:
                if parent.creator is not None and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)


def backward(root: Tensor):
    """
    Populate `.grad` of every requires_grad tensor reachable from root.

    Gradients accumulate: a tensor used twice receives the sum of both
    contributions, and calling backward twice adds up as well.

    Args:
        root: Scalar tensor to differentiate

    Raises:
        ShapeError: If root is not a scalar
    """
    if root.data.size != 1:
        raise ShapeError(f"backward() needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        logger.debug("backward() called on a tensor that does not require grad")
        return

    if root.creator is None:
        root.accumulate_grad(np.ones_like(root.data))
        return

    tape = Tape.record(root)
    pending: Dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}

    for entry in reversed(tape.entries):
        grad = pending.pop(id(entry.output), None)
        if grad is None:
            continue
        entry.output.accumulate_grad(grad)
        input_grads = entry.function.backward(grad)
        for parent, parent_grad in zip(entry.function.inputs, input_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            if parent.creator is None:
                parent.accumulate_grad(parent_grad)
            elif id(parent) in pending:
                pending[id(parent)] = pending[id(parent)] + parent_grad
            else:
                pending[id(parent)] = np.asarray(parent_grad, dtype=np.float64).reshape(parent.shape)
