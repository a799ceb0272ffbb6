"""
Cell Network Module
Macro layout shared by the super-network and the rebuilt discrete networks:
stem → L stacked cells → global average pool → linear classifier.

Cell k has N nodes (1-based). Nodes 1 and 2 are the outputs of cells k−2
and k−1 (the stem output stands in for missing predecessors), nodes
3..N−1 are computing nodes, and the cell output (node N) is the channel
concatenation of the computing nodes. Reduction cells sit at indices
floor(L/3)+1 and floor(2L/3)+1; they double the node width and halve the
resolution through stride-2 edges leaving the input nodes. When node 1 is
one resolution level above node 2 (cell k−1 was a reduction cell) it is
first passed through a stride-2 1×1 alignment projection. In cell 1 both
input nodes would be the stem output itself, so node 1 goes through a
stride-1 1×1 projection instead and the two inputs stay distinguishable.
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.autodiff import functional as F
from src.autodiff.tensor import Parameter, Tensor
from src.errors import ShapeError
from src.search_space.operators import OperatorInstance, OperatorKind, build_operator, fan_in_uniform

logger = logging.getLogger(__name__)


class CellKind(str, Enum):
    NORMAL = "normal"
    REDUCTION = "reduction"


@dataclass(frozen=True)
class CellSpec:
    """
    Static layout of one cell.

    Attributes:
        index: 1-based cell index k
        kind: Normal or Reduction
        node_count: N (nodes 1..N, computing nodes 3..N−1)
        channels: Width of every computing node
        input_channels: Channels of input nodes 1 and 2
        align: Whether node 1 passes through a 1×1 projection before use
        level: Number of resolution halvings applied to this cell's output
        align_stride: Stride of that projection (2 to align resolutions, 1 in cell 1)
    """
    index: int
    kind: CellKind
    node_count: int
    channels: int
    input_channels: Tuple[int, int]
    align: bool
    level: int
    align_stride: int = 2

    @property
    def is_reduction(self) -> bool:
        return self.kind is CellKind.REDUCTION

    @property
    def computing_nodes(self) -> range:
        return range(3, self.node_count)

    @property
    def output_channels(self) -> int:
        return (self.node_count - 3) * self.channels

    def in_channels_of(self, node: int) -> int:
        return self.input_channels[node - 1] if node <= 2 else self.channels

    def edge_stride(self, node: int) -> int:
        return 2 if self.is_reduction and node <= 2 else 1


def reduction_indices(cell_count: int) -> Tuple[int, int]:
    return cell_count // 3 + 1, (2 * cell_count) // 3 + 1


def plan_cells(cell_count: int, node_count: int, channels: int) -> List[CellSpec]:
    """
    Lay out L cells of N nodes on a stem of `channels` channels.

    Raises:
        ValueError: If L < 3, N < 4 or channels < 1
    """
    if cell_count < 3:
        raise ValueError(f"a cell network needs L >= 3 cells, got {cell_count}")
    if node_count < 4:
        raise ValueError(f"a cell needs N >= 4 nodes, got {node_count}")
    if channels < 1:
        raise ValueError(f"channels must be positive, got {channels}")

    reductions = set(reduction_indices(cell_count))
    # (channels, resolution level) of the two most recent outputs
    prev_prev = prev = (channels, 0)
    width = channels
    plan = []
    for k in range(1, cell_count + 1):
        reduction = k in reductions
        if reduction:
            width *= 2
        spec = CellSpec(
            index=k,
            kind=CellKind.REDUCTION if reduction else CellKind.NORMAL,
            node_count=node_count,
            channels=width,
            input_channels=(prev_prev[0], prev[0]),
            align=k == 1 or prev_prev[1] < prev[1],
            level=prev[1] + (1 if reduction else 0),
            align_stride=1 if k == 1 else 2,
        )
        plan.append(spec)
        prev_prev, prev = prev, (spec.output_channels, spec.level)
    return plan


class CellNetwork:
    """
    Stem, cell stacking and classifier head.

    Subclasses decide which operators live on which edges and how a
    computing node combines its incoming edges (`_node_value`).
    """

    def __init__(self, cell_count: int, node_count: int, channels: int, classes: int,
                 in_channels: int = 3, rng: Optional[np.random.Generator] = None):
        if classes < 2:
            raise ValueError(f"need at least 2 classes, got {classes}")
        self.plan = plan_cells(cell_count, node_count, channels)
        self.channels = channels
        self.classes = classes
        self.in_channels = in_channels
        self.rng = rng if rng is not None else np.random.default_rng()

        self.stem_conv = Parameter(np.zeros((channels, in_channels, 3, 3)), "stem.conv")
        self.stem_gain = Parameter(np.ones(channels), "stem.norm_gain")
        self.stem_bias = Parameter(np.zeros(channels), "stem.norm_bias")
        features = self.plan[-1].output_channels
        self.classifier_weight = Parameter(np.zeros((classes, features)), "classifier.weight")
        self.classifier_bias = Parameter(np.zeros(classes), "classifier.bias")
        self.aligns: Dict[int, OperatorInstance] = {}

    @property
    def cell_count(self) -> int:
        return len(self.plan)

    @property
    def node_count(self) -> int:
        return self.plan[0].node_count

    def _build_align(self, spec: CellSpec) -> OperatorInstance:
        channels = spec.input_channels[0]
        return build_operator(OperatorKind.SKIP_CONNECT, channels, channels, spec.align_stride, self.rng,
                              name=f"cell{spec.index}.align", project=True)

    # ==================== Parameters ====================

    def edge_operators(self) -> List[OperatorInstance]:
        raise NotImplementedError

    def model_parameters(self) -> List[Parameter]:
        """All model parameters θ in a fixed order."""
        params = [self.stem_conv, self.stem_gain, self.stem_bias]
        for k in sorted(self.aligns):
            params.extend(self.aligns[k].all_parameters())
        for op in self.edge_operators():
            params.extend(op.all_parameters())
        params.extend([self.classifier_weight, self.classifier_bias])
        return params

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.model_parameters()))

    def parameter_dict(self) -> Dict[str, Parameter]:
        return {p.identifier: p for p in self.model_parameters()}

    def load_parameters(self, values: Dict[str, np.ndarray], strict: bool = True):
        """
        Copy values into parameters with matching identifiers.

        Raises:
            ShapeError: On a shape mismatch, or a missing entry when strict
        """
        for identifier, param in self.parameter_dict().items():
            if identifier not in values:
                if strict:
                    raise ShapeError(f"no stored value for parameter {identifier}")
                continue
            value = np.asarray(values[identifier], dtype=np.float64)
            if value.shape != param.shape:
                raise ShapeError(f"stored value for {identifier} has shape {value.shape}, expected {param.shape}")
            param.data = value.copy()

    def reinit_model_params(self, rng: Optional[np.random.Generator] = None):
        """Redraw every model parameter from its initialization distribution."""
        rng = rng if rng is not None else self.rng
        self.stem_conv.data = fan_in_uniform(self.stem_conv.shape, self.in_channels * 9, rng)
        self.stem_gain.data = np.ones(self.channels)
        self.stem_bias.data = np.zeros(self.channels)
        for k in sorted(self.aligns):
            self.aligns[k].reinitialize(rng)
        for op in self.edge_operators():
            op.reinitialize(rng)
        features = self.classifier_weight.shape[1]
        self.classifier_weight.data = fan_in_uniform(self.classifier_weight.shape, features, rng)
        self.classifier_bias.data = fan_in_uniform(self.classifier_bias.shape, features, rng)
        for param in self.model_parameters():
            param.zero_grad()

    @contextmanager
    def theta_frozen(self) -> Iterator[None]:
        """Temporarily stop gradients from flowing into model parameters."""
        params = self.model_parameters()
        for param in params:
            param.requires_grad = False
        try:
            yield
        finally:
            for param in params:
                param.requires_grad = True

    # ==================== Forward ====================

    def _node_value(self, spec: CellSpec, node: int, states: Sequence[Tensor]) -> Tensor:
        raise NotImplementedError

    def forward(self, x: Tensor) -> Tensor:
        """
        Args:
            x: Batch of images, NCHW

        Returns:
            Logits of shape (batch, classes)
        """
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"expected NCHW input with {self.in_channels} channels (dim 1), got shape {x.shape}")
        stem = F.conv2d(x, self.stem_conv, padding=1)
        stem = F.affine_channel_norm(stem, self.stem_gain, self.stem_bias)

        prev_prev = prev = stem
        for spec in self.plan:
            first = prev_prev
            if spec.index in self.aligns:
                first = self.aligns[spec.index].apply(prev_prev)
            states = [first, prev]
            for node in spec.computing_nodes:
                states.append(self._node_value(spec, node, states))
            prev_prev, prev = prev, F.concat(states[2:], axis=1)

        pooled = F.global_avg_pool(prev)
        return F.linear(pooled, self.classifier_weight, self.classifier_bias)

    __call__ = forward
