"""
Operator Space Module
Candidate operators that can sit on a cell edge, their construction and
their parameter/FLOP formulas.

Three operator kinds exist:
- skip:  identity, or a strided 1×1 projection + norm when the edge changes
         resolution or channel count
- sep3:  relu → 3×3 depthwise → 1×1 pointwise → channel-affine norm
- dil5:  relu → 5×5 depthwise (dilation 2) → 1×1 pointwise → channel-affine norm

Operator spaces are ordered subsets of these kinds; O1 ⊂ O2 ⊂ O3 are the
presets used for search.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from src.autodiff import functional as F
from src.autodiff.tensor import Parameter, Tensor
from src.errors import ShapeError

logger = logging.getLogger(__name__)


class OperatorKind(str, Enum):
    SKIP_CONNECT = "skip"
    SEP_CONV_3X3 = "sep3"
    DIL_CONV_5X5 = "dil5"

    @property
    def is_conv(self) -> bool:
        return self is not OperatorKind.SKIP_CONNECT


# kernel, dilation, padding; stride-1 output keeps the spatial size
_CONV_GEOMETRY: Dict[OperatorKind, Tuple[int, int, int]] = {
    OperatorKind.SEP_CONV_3X3: (3, 1, 1),
    OperatorKind.DIL_CONV_5X5: (5, 2, 4),
}


@dataclass(frozen=True)
class OperatorSpace:
    """An ordered, duplicate-free, non-empty list of operator kinds."""
    space_id: str
    kinds: Tuple[OperatorKind, ...]

    def __post_init__(self):
        if not self.kinds:
            raise ValueError(f"operator space {self.space_id} is empty")
        if len(set(self.kinds)) != len(self.kinds):
            raise ValueError(f"operator space {self.space_id} contains duplicates")

    def __len__(self) -> int:
        return len(self.kinds)

    def __iter__(self) -> Iterator[OperatorKind]:
        return iter(self.kinds)

    def __getitem__(self, index: int) -> OperatorKind:
        return self.kinds[index]

    def index(self, kind: OperatorKind) -> int:
        return self.kinds.index(kind)

    @classmethod
    def from_id(cls, space_id: str) -> "OperatorSpace":
        try:
            return OPERATOR_SPACES[space_id.upper()]
        except KeyError:
            raise ValueError(
                f"Unknown operator space '{space_id}'. Choose one of: {', '.join(OPERATOR_SPACES)}"
            ) from None


OPERATOR_SPACES: Dict[str, OperatorSpace] = {
    "O1": OperatorSpace("O1", (OperatorKind.SKIP_CONNECT,)),
    "O2": OperatorSpace("O2", (OperatorKind.SKIP_CONNECT, OperatorKind.SEP_CONV_3X3)),
    "O3": OperatorSpace("O3", (OperatorKind.SKIP_CONNECT, OperatorKind.SEP_CONV_3X3, OperatorKind.DIL_CONV_5X5)),
}


# ==================== Parameter initialization ====================

def fan_in_uniform(shape: Tuple[int, ...], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform(−s, s) with s = 1/sqrt(fan_in)."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _conv_fan_in(weight: Parameter) -> int:
    _, cg, kh, kw = weight.shape
    return cg * kh * kw


@dataclass
class OperatorInstance:
    """
    One parameterized operator on one edge.

    `parameters` holds the convolution weights; `norm_parameters` holds the
    per-channel affine gain and bias, which are accounted separately.
    """
    kind: OperatorKind
    in_channels: int
    out_channels: int
    stride: int
    name: str
    parameters: List[Parameter] = field(default_factory=list)
    norm_parameters: List[Parameter] = field(default_factory=list)

    @property
    def is_identity(self) -> bool:
        return self.kind is OperatorKind.SKIP_CONNECT and not self.parameters

    def all_parameters(self) -> List[Parameter]:
        return self.parameters + self.norm_parameters

    def reinitialize(self, rng: np.random.Generator):
        for weight in self.parameters:
            weight.data = fan_in_uniform(weight.shape, _conv_fan_in(weight), rng)
            weight.zero_grad()
        for norm in self.norm_parameters:
            norm.data = np.ones(norm.shape) if norm.identifier.endswith("norm_gain") else np.zeros(norm.shape)
            norm.zero_grad()

    def apply(self, x: Tensor) -> Tensor:
        """
        Run the operator on an NCHW feature map.

        Raises:
            ShapeError: If x does not have in_channels channels
        """
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"{self.name}: expected input with {self.in_channels} channels (dim 1), got shape {x.shape}"
            )
        if self.is_identity:
            return x
        gain, bias = self.norm_parameters
        if self.kind is OperatorKind.SKIP_CONNECT:
            out = F.conv2d(x, self.parameters[0], stride=self.stride)
            return F.affine_channel_norm(out, gain, bias)

        kernel, dilation, padding = _CONV_GEOMETRY[self.kind]
        depthwise, pointwise = self.parameters
        out = F.relu(x)
        out = F.conv2d(out, depthwise, stride=self.stride, padding=padding, dilation=dilation, groups=self.in_channels)
        out = F.conv2d(out, pointwise)
        return F.affine_channel_norm(out, gain, bias)


def build_operator(
    kind: OperatorKind,
    in_channels: int,
    out_channels: int,
    stride: int,
    rng: Optional[np.random.Generator] = None,
    name: Optional[str] = None,
    project: bool = False,
) -> OperatorInstance:
    """
    Construct an operator with freshly initialized parameters.

    Args:
        kind: Operator kind
        in_channels: Channels of the edge's source node
        out_channels: Channels of the edge's target node
        stride: 1, or 2 for edges leaving an input node of a reduction cell
        rng: Random generator for parameter initialization
        name: Identifier prefix for the parameters
        project: Give a skip its 1×1 projection even when shapes already match

    Returns:
        The operator instance

    Raises:
        ValueError: For unsupported stride or non-positive channels
    """
    if stride not in (1, 2):
        raise ValueError(f"unsupported stride {stride}; operators accept stride 1 or 2")
    if in_channels <= 0 or out_channels <= 0:
        raise ValueError(f"channels must be positive, got {in_channels}→{out_channels}")
    rng = rng if rng is not None else np.random.default_rng()
    name = name or f"{kind.value}_{in_channels}_{out_channels}_s{stride}"
    op = OperatorInstance(kind, in_channels, out_channels, stride, name)

    if kind is OperatorKind.SKIP_CONNECT:
        if stride == 1 and in_channels == out_channels and not project:
            return op
        op.parameters.append(Parameter(np.zeros((out_channels, in_channels, 1, 1)), f"{name}.proj"))
    else:
        kernel, _, _ = _CONV_GEOMETRY[kind]
        op.parameters.append(Parameter(np.zeros((in_channels, 1, kernel, kernel)), f"{name}.dw"))
        op.parameters.append(Parameter(np.zeros((out_channels, in_channels, 1, 1)), f"{name}.pw"))

    op.norm_parameters.append(Parameter(np.ones(out_channels), f"{name}.norm_gain"))
    op.norm_parameters.append(Parameter(np.zeros(out_channels), f"{name}.norm_bias"))
    op.reinitialize(rng)
    return op


# ==================== Cost formulas ====================

def _is_identity(kind: OperatorKind, in_ch: int, out_ch: int, stride: int) -> bool:
    return kind is OperatorKind.SKIP_CONNECT and stride == 1 and in_ch == out_ch


def op_param_count(kind: OperatorKind, in_ch: int, out_ch: int, stride: int = 1) -> int:
    """Convolution weights of one operator (norm parameters excluded)."""
    if _is_identity(kind, in_ch, out_ch, stride):
        return 0
    if kind is OperatorKind.SKIP_CONNECT:
        return in_ch * out_ch
    kernel, _, _ = _CONV_GEOMETRY[kind]
    return kernel * kernel * in_ch + in_ch * out_ch


def op_norm_param_count(kind: OperatorKind, in_ch: int, out_ch: int, stride: int = 1) -> int:
    """Gain + bias of the operator's affine norm (2·out_ch, or 0 for identity)."""
    return 0 if _is_identity(kind, in_ch, out_ch, stride) else 2 * out_ch


def op_flop_count(kind: OperatorKind, in_ch: int, out_ch: int, out_h: int, out_w: int, stride: int = 1) -> int:
    """FLOPs = 2 × multiply-accumulates at the operator's output resolution."""
    return 2 * op_param_count(kind, in_ch, out_ch, stride) * out_h * out_w


def op_output_size(kind: OperatorKind, size: int, stride: int) -> int:
    """Spatial output size of an operator for an input of the given size."""
    if kind is OperatorKind.SKIP_CONNECT:
        return F.conv_output_size(size, 1, stride)
    kernel, dilation, padding = _CONV_GEOMETRY[kind]
    return F.conv_output_size(size, kernel, stride, padding, dilation)
