"""
Complexity Module
Parameter and FLOP accounting for genotypes, computed from formulas
without building tensors, plus structural statistics.

Conventions:
- Params count every scalar of the rebuilt discrete network: stem conv and
  norm, node-1 projections (cell 1 and after reductions), operator weights,
  operator norms (2·C each) and the classifier weight + bias.
- FLOPs = 2 × multiply-accumulates of the convolutions and the classifier,
  each op at its actual output resolution. Norms, ReLUs and additions are
  not counted; an identity skip costs nothing.
"""

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Tuple

import pandas as pd

from src.autodiff.functional import conv_output_size
from src.search_space.genotype import Genotype
from src.search_space.network import plan_cells
from src.search_space.operators import (
    OperatorKind,
    op_flop_count,
    op_norm_param_count,
    op_output_size,
    op_param_count,
)

logger = logging.getLogger(__name__)


@dataclass
class CellComplexity:
    index: int
    kind: str
    params: int
    flops: int
    edges: int


@dataclass
class ComplexityReport:
    """
    Attributes:
        params: Total parameter count
        flops: Total FLOPs (2×MAC) for one input image
        cells: Per-cell breakdown
        stem_params, stem_flops, head_params, head_flops: Stem and classifier shares
        edge_count: Retained edges in the genotype
        input_hw: Input resolution used for FLOPs
    """
    params: int
    flops: int
    cells: List[CellComplexity] = field(default_factory=list)
    stem_params: int = 0
    stem_flops: int = 0
    head_params: int = 0
    head_flops: int = 0
    edge_count: int = 0
    input_hw: Tuple[int, int] = (0, 0)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["input_hw"] = list(self.input_hw)
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_frame(self) -> pd.DataFrame:
        rows = [{"part": "stem", "kind": "-", "edges": 0, "params": self.stem_params, "flops": self.stem_flops}]
        for cell in self.cells:
            rows.append({"part": f"cell {cell.index}", "kind": cell.kind, "edges": cell.edges,
                         "params": cell.params, "flops": cell.flops})
        rows.append({"part": "classifier", "kind": "-", "edges": 0, "params": self.head_params,
                     "flops": self.head_flops})
        rows.append({"part": "total", "kind": "-", "edges": self.edge_count, "params": self.params,
                     "flops": self.flops})
        return pd.DataFrame(rows)

    def to_table(self) -> str:
        return self.to_frame().to_string(index=False)


def _align_cost(in_ch: int, out_h: int, out_w: int) -> Tuple[int, int]:
    # 1×1 projection + norm; same cost at stride 1 or 2 for a given output size
    kind = OperatorKind.SKIP_CONNECT
    params = op_param_count(kind, in_ch, in_ch, 2) + op_norm_param_count(kind, in_ch, in_ch, 2)
    return params, op_flop_count(kind, in_ch, in_ch, out_h, out_w, 2)


def complexity_report(genotype: Genotype, channels: int, classes: int, input_hw: Tuple[int, int] = (32, 32),
                      in_channels: int = 3) -> ComplexityReport:
    """
    Full params/FLOPs breakdown of the network rebuild_discrete would build.

    Args:
        genotype: Valid genotype
        channels: Stem width
        classes: Number of output classes
        input_hw: Input (height, width)
        in_channels: Image channels

    Returns:
        ComplexityReport whose totals equal the sum of its parts
    """
    genotype.validate()
    plan = plan_cells(genotype.cell_count, genotype.node_count, channels)
    height, width = input_hw

    stem_params = 9 * in_channels * channels + 2 * channels
    stem_flops = 2 * 9 * in_channels * channels * height * width

    # (height, width) of the two most recent outputs
    prev_prev = prev = (height, width)
    cells = []
    for spec, cell in zip(plan, genotype.cells):
        params = flops = 0
        first = prev_prev
        if spec.align and cell.uses_node(1):
            stride = spec.align_stride
            first = (conv_output_size(prev_prev[0], 1, stride), conv_output_size(prev_prev[1], 1, stride))
            align_params, align_flops = _align_cost(spec.input_channels[0], *first)
            params += align_params
            flops += align_flops
        node_hw = _node_size(spec, prev)
        sizes = {1: first, 2: prev}
        for edge in cell.edges:
            stride = spec.edge_stride(edge.source)
            in_ch = spec.in_channels_of(edge.source)
            src_h, src_w = sizes.get(edge.source, node_hw)
            out_h = op_output_size(edge.op, src_h, stride)
            out_w = op_output_size(edge.op, src_w, stride)
            params += op_param_count(edge.op, in_ch, spec.channels, stride)
            params += op_norm_param_count(edge.op, in_ch, spec.channels, stride)
            flops += op_flop_count(edge.op, in_ch, spec.channels, out_h, out_w, stride)
        cells.append(CellComplexity(spec.index, spec.kind.value, params, flops, len(cell.edges)))
        prev_prev, prev = prev, node_hw

    features = plan[-1].output_channels
    head_params = features * classes + classes
    head_flops = 2 * features * classes

    return ComplexityReport(
        params=stem_params + sum(c.params for c in cells) + head_params,
        flops=stem_flops + sum(c.flops for c in cells) + head_flops,
        cells=cells,
        stem_params=stem_params,
        stem_flops=stem_flops,
        head_params=head_params,
        head_flops=head_flops,
        edge_count=genotype.edge_count,
        input_hw=(height, width),
    )


def _node_size(spec, prev: Tuple[int, int]) -> Tuple[int, int]:
    """Resolution of the computing nodes of a cell whose node 2 has size prev."""
    if spec.is_reduction:
        return conv_output_size(prev[0], 1, 2), conv_output_size(prev[1], 1, 2)
    return prev


def count_params(genotype: Genotype, channels: int, classes: int, in_channels: int = 3) -> int:
    """Exact scalar count of rebuild_discrete(genotype, channels, classes)."""
    return complexity_report(genotype, channels, classes, (8, 8), in_channels).params


def count_flops(genotype: Genotype, channels: int, classes: int, input_hw: Tuple[int, int],
                in_channels: int = 3) -> int:
    """
    FLOPs (2×MAC) of one forward pass of the rebuilt network.

    Raises:
        ValueError: If the input is smaller than 4×4
    """
    if min(input_hw) < 4:
        raise ValueError(f"input resolution must be at least 4, got {input_hw}")
    return complexity_report(genotype, channels, classes, input_hw, in_channels).flops


def structure_stats(genotype: Genotype) -> Dict:
    """
    Structural summary of a genotype.

    Returns:
        Dictionary with:
        - edges_per_node: histogram in-degree → number of computing nodes
        - operator_frequency: operator short name → edge count
        - edge_count: total edges
        - cells_unique: True when no two cells have identical edge sets
    """
    in_degrees = Counter()
    for cell in genotype.cells:
        for node in range(3, genotype.node_count):
            in_degrees[len(cell.incoming(node))] += 1
    ops = Counter(edge.op.value for cell in genotype.cells for edge in cell.edges)
    edge_sets = [cell.edge_set() for cell in genotype.cells]
    return {
        "edges_per_node": dict(sorted(in_degrees.items())),
        "operator_frequency": dict(sorted(ops.items())),
        "edge_count": genotype.edge_count,
        "cells_unique": len(set(edge_sets)) == len(edge_sets),
    }
