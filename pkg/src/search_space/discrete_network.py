"""
Discrete Network Module
A trainable network rebuilt from a genotype.

Computing nodes are the plain sum of their retained edges (no mixture
weights), the stem and classifier match the super-network, and all
parameters are fresh. Parameter identifiers are the same as in the
super-network, so values can be copied across by name.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.autodiff import functional as F
from src.autodiff.tensor import Tensor
from src.errors import GenotypeError
from src.search_space.genotype import Genotype
from src.search_space.network import CellNetwork, CellSpec
from src.search_space.operators import OperatorInstance, build_operator

logger = logging.getLogger(__name__)


class DiscreteNetwork(CellNetwork):
    """
    Attributes:
        genotype: The architecture this network realizes
        edges: (k, i, j, operator kind) → operator instance
    """

    def __init__(self, genotype: Genotype, channels: int, classes: int, in_channels: int = 3,
                 rng: Optional[np.random.Generator] = None):
        genotype.validate()
        super().__init__(genotype.cell_count, genotype.node_count, channels, classes, in_channels, rng)
        self.genotype = genotype
        self.edges: Dict[Tuple[int, int, int, str], OperatorInstance] = {}

        for spec, cell in zip(self.plan, genotype.cells):
            if cell.kind is not spec.kind:
                raise GenotypeError(f"cell {cell.index} kind {cell.kind.value} does not match layout {spec.kind.value}")
            # The alignment projection only exists when node 1 is actually read
            if spec.align and cell.uses_node(1):
                self.aligns[spec.index] = self._build_align(spec)
            for edge in sorted(cell.edges):
                self.edges[(spec.index, edge.source, edge.target, edge.op.value)] = build_operator(
                    edge.op, spec.in_channels_of(edge.source), spec.channels, spec.edge_stride(edge.source), self.rng,
                    name=f"cell{spec.index}.edge{edge.source}_{edge.target}.{edge.op.value}",
                )
        self.reinit_model_params()

    def edge_operators(self) -> List[OperatorInstance]:
        return [self.edges[key] for key in sorted(self.edges)]

    def _node_value(self, spec: CellSpec, node: int, states: Sequence[Tensor]) -> Tensor:
        outputs = [
            op.apply(states[i - 1])
            for (k, i, j, _), op in sorted(self.edges.items())
            if k == spec.index and j == node
        ]
        return F.add_n(outputs)
