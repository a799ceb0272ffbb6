"""
Genotype Graph Module
DOT export of genotypes with graphviz: one cluster per cell, nodes
labeled by index, edges labeled by operator.
"""

import logging
from pathlib import Path
from typing import Optional

from graphviz import Digraph

from src.search_space.genotype import Genotype

logger = logging.getLogger(__name__)

_OP_COLORS = {
    "skip": "gray40",
    "sep3": "royalblue3",
    "dil5": "darkorange3",
}


def genotype_digraph(genotype: Genotype, name: str = "genotype") -> Digraph:
    """
    Build a Digraph with a `cluster_<k>` subgraph per cell. Inside cell k,
    node j is `c<k>_n<j>`; the output node collects the computing nodes.
    """
    dot = Digraph(name=name, graph_attr={"rankdir": "LR", "compound": "true"},
                  node_attr={"shape": "circle", "fontsize": "10"}, edge_attr={"fontsize": "9"})
    output = genotype.node_count
    for cell in genotype.cells:
        k = cell.index
        with dot.subgraph(name=f"cluster_{k}") as sub:
            sub.attr(label=f"cell {k} ({cell.kind.value})", style="rounded",
                     color="firebrick" if cell.kind.value == "reduction" else "black")
            for j in range(1, output + 1):
                shape = "box" if j <= 2 or j == output else "circle"
                label = f"{j}" if j < output else "out"
                sub.node(f"c{k}_n{j}", label=label, shape=shape)
            for edge in cell.edges:
                sub.edge(f"c{k}_n{edge.source}", f"c{k}_n{edge.target}", label=edge.op.value,
                         color=_OP_COLORS.get(edge.op.value, "black"))
            for j in range(3, output):
                sub.edge(f"c{k}_n{j}", f"c{k}_n{output}", style="dashed", arrowhead="none")
    return dot


def to_dot(genotype: Genotype) -> str:
    """DOT source of the genotype graph."""
    return genotype_digraph(genotype).source


def save_dot(genotype: Genotype, path: Path, render_format: Optional[str] = None) -> Path:
    """
    Write the DOT source; optionally also render it (requires the Graphviz
    binaries, failures are logged and ignored).
    """
    path = Path(path)
    path.write_text(to_dot(genotype), encoding="utf-8")
    if render_format:
        try:
            genotype_digraph(genotype).render(path.with_suffix(""), format=render_format, cleanup=True)
        except Exception as e:
            logger.warning(f"Could not render {path} as {render_format}: {e}")
    return path
