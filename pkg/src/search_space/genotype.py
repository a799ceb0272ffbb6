"""
Genotype Module
Serializable discrete architectures.

A genotype lists, per cell, the retained edges (from node i, to node j,
operator kind). Cells are free to differ from each other and a computing
node may keep any number of incoming edges (at least one).

JSON layout (stable field order):

    {"space": "O3", "N": 6, "cells": [
        {"k": 1, "kind": "normal", "edges": [{"from": 1, "to": 3, "op": "sep3"}, ...]},
        ...]}
"""

import json
import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

from src.errors import GenotypeError
from src.search_space.network import CellKind, reduction_indices
from src.search_space.operators import OperatorKind, OperatorSpace

logger = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class GenotypeEdge:
    source: int
    target: int
    op: OperatorKind


@dataclass(frozen=True)
class GenotypeCell:
    index: int
    kind: CellKind
    edges: Tuple[GenotypeEdge, ...]

    def incoming(self, node: int) -> List[GenotypeEdge]:
        return [edge for edge in self.edges if edge.target == node]

    def edge_set(self) -> frozenset:
        return frozenset((e.source, e.target, e.op) for e in self.edges)

    def uses_node(self, node: int) -> bool:
        return any(edge.source == node for edge in self.edges)


@dataclass(frozen=True)
class Genotype:
    space: str
    node_count: int
    cells: Tuple[GenotypeCell, ...]

    @property
    def cell_count(self) -> int:
        return len(self.cells)

    @property
    def edge_count(self) -> int:
        return sum(len(cell.edges) for cell in self.cells)

    def validate(self) -> "Genotype":
        """
        Check every structural invariant.

        Raises:
            GenotypeError: Naming the first violation found
        """
        try:
            space = OperatorSpace.from_id(self.space)
        except ValueError as e:
            raise GenotypeError(str(e)) from None
        if self.node_count < 4:
            raise GenotypeError(f"N must be >= 4, got {self.node_count}")
        if len(self.cells) < 3:
            raise GenotypeError(f"a genotype needs at least 3 cells, got {len(self.cells)}")
        reductions = set(reduction_indices(len(self.cells)))
        for position, cell in enumerate(self.cells, start=1):
            if cell.index != position:
                raise GenotypeError(f"cell at position {position} has index {cell.index}")
            expected = CellKind.REDUCTION if cell.index in reductions else CellKind.NORMAL
            if cell.kind is not expected:
                raise GenotypeError(f"cell {cell.index} must be {expected.value}, got {cell.kind.value}")
            seen = set()
            for edge in cell.edges:
                if not 3 <= edge.target <= self.node_count - 1:
                    raise GenotypeError(f"cell {cell.index}: edge target {edge.target} is not a computing node")
                if not 1 <= edge.source < edge.target:
                    raise GenotypeError(f"cell {cell.index}: edge {edge.source}->{edge.target} is not forward")
                if edge.op not in space.kinds:
                    raise GenotypeError(f"cell {cell.index}: operator {edge.op.value} not in space {self.space}")
                key = (edge.source, edge.target, edge.op)
                if key in seen:
                    raise GenotypeError(f"cell {cell.index}: duplicate edge {edge.source}->{edge.target} {edge.op.value}")
                seen.add(key)
            for node in range(3, self.node_count):
                if not cell.incoming(node):
                    raise GenotypeError(f"cell {cell.index}: computing node {node} has no incoming edge")
        return self

    # ==================== Serialization ====================

    def to_dict(self) -> Dict:
        return {
            "space": self.space,
            "N": self.node_count,
            "cells": [
                {
                    "k": cell.index,
                    "kind": cell.kind.value,
                    "edges": [{"from": e.source, "to": e.target, "op": e.op.value} for e in cell.edges],
                }
                for cell in self.cells
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: Dict) -> "Genotype":
        try:
            cells = tuple(
                GenotypeCell(
                    index=int(cell["k"]),
                    kind=CellKind(cell["kind"]),
                    edges=tuple(
                        GenotypeEdge(int(e["from"]), int(e["to"]), OperatorKind(e["op"])) for e in cell["edges"]
                    ),
                )
                for cell in data["cells"]
            )
            return cls(space=str(data["space"]), node_count=int(data["N"]), cells=cells)
        except (KeyError, TypeError, ValueError) as e:
            raise GenotypeError(f"malformed genotype: {e}") from None

    @classmethod
    def from_json(cls, text: str) -> "Genotype":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise GenotypeError(f"genotype is not valid JSON: {e}") from None
        return cls.from_dict(data)
