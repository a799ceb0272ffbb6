"""
Super-network Module
The weight-shared super-network searched by ESS.

Every edge (i → j) of every cell carries one operator instance per kind in
the operator space. Each cell owns its own architectural parameters
α[k][j] of shape (j−1, |O|): row r is predecessor i = r+1, column o is the
operator. A boolean `alive` mask of the same shape records which
(predecessor, operator) entries survive discretization.

Node-wise normalization: the contribution weight of entry (i, o) at node j
is the softmax of α over ALL alive entries feeding node j jointly, and

    x_j = Σ_(i,o) alive  a[i, o] · f_(i,j)^o(x_i)

Pruned entries are neither executed nor part of any softmax. Edge-wise
normalization (softmax over the operators of one edge, classic DARTS) is
available as a baseline mode.
"""

import hashlib
import logging
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.autodiff import functional as F
from src.autodiff.tensor import Parameter, Tensor
from src.errors import DeadNodeError
from src.search_space.network import CellNetwork, CellSpec
from src.search_space.operators import OperatorInstance, OperatorSpace, build_operator

logger = logging.getLogger(__name__)

NodeKey = Tuple[int, int]

NORMALIZATIONS = ("node", "edge")


class ArchParams:
    """
    Architectural parameters α and alive masks for every (cell, node).

    Keys are (k, j) with 1-based cell index k and computing node j.
    """

    def __init__(self, cell_count: int, node_count: int, op_count: int):
        self.cell_count = cell_count
        self.node_count = node_count
        self.op_count = op_count
        self.alpha: Dict[NodeKey, Parameter] = {}
        self.alive: Dict[NodeKey, np.ndarray] = {}
        for k in range(1, cell_count + 1):
            for j in range(3, node_count):
                self.alpha[(k, j)] = Parameter(np.zeros((j - 1, op_count)), f"alpha.cell{k}.node{j}")
                self.alive[(k, j)] = np.ones((j - 1, op_count), dtype=bool)

    def keys(self) -> List[NodeKey]:
        return sorted(self.alpha)

    def nodes_of(self, k: int) -> range:
        return range(3, self.node_count)

    def cells(self) -> range:
        return range(1, self.cell_count + 1)

    def parameters(self) -> List[Parameter]:
        return [self.alpha[key] for key in self.keys()]

    def entry_count(self) -> int:
        return int(sum(p.size for p in self.alpha.values()))

    def alive_count(self, k: Optional[int] = None) -> int:
        return int(sum(mask.sum() for (cell, _), mask in self.alive.items() if k is None or cell == k))

    def snapshot(self) -> Tuple[Dict[NodeKey, np.ndarray], Dict[NodeKey, np.ndarray]]:
        """Copies of (alpha values, alive masks), safe to hand to other threads."""
        return ({key: p.data.copy() for key, p in self.alpha.items()},
                {key: mask.copy() for key, mask in self.alive.items()})

    def load(self, alpha: Dict[NodeKey, np.ndarray], alive: Dict[NodeKey, np.ndarray]):
        for key in self.keys():
            self.alpha[key].data = np.array(alpha[key], dtype=np.float64)
            self.alive[key] = np.array(alive[key], dtype=bool)

    def digest(self) -> str:
        """SHA-256 over alpha values and masks, in key order."""
        h = hashlib.sha256()
        for key in self.keys():
            h.update(np.ascontiguousarray(self.alpha[key].data).tobytes())
            h.update(np.ascontiguousarray(self.alive[key]).tobytes())
        return h.hexdigest()

    def zero_grad(self):
        for param in self.alpha.values():
            param.zero_grad()


# ==================== Contribution weights ====================

def node_weight_matrix(arch: ArchParams, k: int, j: int) -> np.ndarray:
    """
    Node-wise contribution weights of node j in cell k as a (j−1, |O|)
    array; pruned entries are 0.

    Raises:
        DeadNodeError: If node j has no alive entry
    """
    mask = arch.alive[(k, j)]
    if not mask.any():
        raise DeadNodeError(f"cell {k} node {j} has no alive incoming entry (dead node)")
    return F.masked_softmax_array(arch.alpha[(k, j)].data, mask, axis=None)


def contribution_weights(arch: ArchParams, k: int, j: int) -> Dict[Tuple[int, int], float]:
    """
    Map (predecessor i, operator index o) → contribution weight for every
    alive entry of node j, normalized jointly over the node.
    """
    weights = node_weight_matrix(arch, k, j)
    rows, cols = np.nonzero(arch.alive[(k, j)])
    return {(int(r) + 1, int(o)): float(weights[r, o]) for r, o in zip(rows, cols)}


def edgewise_weights(arch: ArchParams, k: int, i: int, j: int) -> np.ndarray:
    """
    Softmax over the alive operators of the single edge (i → j); the
    baseline normalization. Pruned operators get weight 0.

    Raises:
        DeadNodeError: If every operator of the edge is pruned
    """
    mask = arch.alive[(k, j)][i - 1]
    if not mask.any():
        raise DeadNodeError(f"cell {k} edge {i}->{j} has no alive operator")
    return F.masked_softmax_array(arch.alpha[(k, j)].data[i - 1], mask)


class SuperNetwork(CellNetwork):
    """
    L cells × N nodes with a mixed operator on every edge.

    Attributes:
        space: Operator space
        arch: Architectural parameters α and alive masks
        edges: (k, i, j, o) → operator instance
        normalization: "node" (FX search) or "edge" (baseline)
    """

    def __init__(self, cell_count: int, node_count: int, space: OperatorSpace, channels: int, classes: int,
                 in_channels: int = 3, rng: Optional[np.random.Generator] = None, normalization: str = "node"):
        super().__init__(cell_count, node_count, channels, classes, in_channels, rng)
        if normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}, got {normalization!r}")
        self.space = space
        self.normalization = normalization
        self.arch = ArchParams(cell_count, node_count, len(space))
        self.edges: Dict[Tuple[int, int, int, int], OperatorInstance] = {}

        for spec in self.plan:
            if spec.align:
                self.aligns[spec.index] = self._build_align(spec)
            for j in spec.computing_nodes:
                for i in range(1, j):
                    for o, kind in enumerate(space):
                        self.edges[(spec.index, i, j, o)] = build_operator(
                            kind, spec.in_channels_of(i), spec.channels, spec.edge_stride(i), self.rng,
                            name=f"cell{spec.index}.edge{i}_{j}.{kind.value}",
                        )
        self.reinit_model_params()
        logger.debug(f"Super-network built: {cell_count} cells, {node_count} nodes, space {space.space_id}, "
                     f"{self.parameter_count()} model parameters, {self.arch.entry_count()} alpha entries")

    def edge_operators(self) -> List[OperatorInstance]:
        return [self.edges[key] for key in sorted(self.edges)]

    def arch_parameters(self) -> List[Parameter]:
        return self.arch.parameters()

    def mixing_weights(self, k: int, j: int) -> Tensor:
        """Differentiable (j−1, |O|) weights of node j under the configured normalization."""
        mask = self.arch.alive[(k, j)]
        if not mask.any():
            raise DeadNodeError(f"cell {k} node {j} has no alive incoming entry (dead node)")
        axis = None if self.normalization == "node" else 1
        return F.masked_softmax(self.arch.alpha[(k, j)], mask=mask, axis=axis)

    def _node_value(self, spec: CellSpec, node: int, states: Sequence[Tensor]) -> Tensor:
        k = spec.index
        weights = self.mixing_weights(k, node)
        mask = self.arch.alive[(k, node)]
        op_count = mask.shape[1]
        outputs, positions = [], []
        for r, o in zip(*np.nonzero(mask)):
            outputs.append(self.edges[(k, int(r) + 1, node, int(o))].apply(states[r]))
            positions.append(int(r) * op_count + int(o))
        return F.weighted_sum(F.take(weights, positions), outputs)

    def alive_operators(self) -> Iterator[Tuple[Tuple[int, int, int, int], OperatorInstance]]:
        for (k, i, j, o), op in sorted(self.edges.items()):
            if self.arch.alive[(k, j)][i - 1, o]:
                yield (k, i, j, o), op


def init_supernet(cell_count: int, node_count: int, space: OperatorSpace, channels: int, classes: int,
                  in_channels: int = 3, rng: Optional[np.random.Generator] = None,
                  normalization: str = "node") -> SuperNetwork:
    """
    Build a super-network with α = 0, every entry alive and fresh θ.

    Raises:
        ValueError: If L < 3 or N < 4
    """
    return SuperNetwork(cell_count, node_count, space, channels, classes, in_channels, rng, normalization)
