"""
Discretizer Module
Turns the continuous super-network into discrete architectures.

- dynamic_discretize: threshold pruning run inside the search loop. Every
  alive entry whose weight is strictly below ε is marked dead, the weight
  being the one the network mixes with: node-wise contribution weights, or
  per-edge softmax weights for an edge-normalized super-network. If that
  would empty a node, its largest-weight entry is kept (dead-node guard).
- extract_genotype: materializes the alive entries as a Genotype.
- constrained_discretize: the classic DARTS rule (best operator per edge,
  two strongest predecessor edges per node), kept as a baseline.
- rebuild_discrete: builds a fresh trainable network from a genotype.

Ties are always broken toward the lowest index.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from src.errors import DeadNodeError, GenotypeError
from src.search_space.discrete_network import DiscreteNetwork
from src.search_space.genotype import Genotype, GenotypeCell, GenotypeEdge
from src.search_space.operators import OperatorKind
from src.autodiff.functional import masked_softmax_array
from src.search_space.supernet import SuperNetwork, edgewise_weights, node_weight_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PrunedEntry:
    """One (predecessor, operator) entry removed from a node."""
    cell: int
    node: int
    predecessor: int
    op: OperatorKind
    weight: float


def pruning_weights(net: SuperNetwork, k: int, j: int) -> np.ndarray:
    """(j−1, |O|) weights of node j under the network's own normalization; pruned entries are 0."""
    if net.normalization == "edge":
        return masked_softmax_array(net.arch.alpha[(k, j)].data, net.arch.alive[(k, j)], axis=1)
    return node_weight_matrix(net.arch, k, j)


def dynamic_discretize(net: SuperNetwork, epsilon: float) -> List[PrunedEntry]:
    """
    Prune, in place, every alive entry with contribution weight a < ε.

    Args:
        net: Super-network whose alive masks are updated
        epsilon: Threshold in (0, 1/|O|)

    Returns:
        The pruning log, ordered by (cell, node, predecessor, operator)

    Raises:
        ValueError: If epsilon is outside (0, 1/|O|)
    """
    op_count = len(net.space)
    if not 0.0 < epsilon < 1.0 / op_count:
        raise ValueError(f"epsilon must lie in (0, 1/{op_count}), got {epsilon}")

    pruned: List[PrunedEntry] = []
    for (k, j) in net.arch.keys():
        mask = net.arch.alive[(k, j)]
        weights = pruning_weights(net, k, j)
        doomed = mask & (weights < epsilon)
        if not doomed.any():
            continue
        if np.array_equal(doomed, mask):
            # argmax returns the first (lowest flat index) maximum
            keep = np.unravel_index(np.argmax(np.where(mask, weights, -1.0)), mask.shape)
            doomed[keep] = False
            logger.warning(f"Dead-node guard: cell {k} node {j} keeps its strongest entry "
                           f"(predecessor {keep[0] + 1}, {net.space[int(keep[1])].value}, a={weights[keep]:.4g})")
        for r, o in zip(*np.nonzero(doomed)):
            pruned.append(PrunedEntry(k, j, int(r) + 1, net.space[int(o)], float(weights[r, o])))
        mask[doomed] = False
    if pruned:
        logger.info(f"Pruned {len(pruned)} entries (ε={epsilon}); {net.arch.alive_count()} alive remain")
    return pruned


def extract_genotype(net: SuperNetwork) -> Genotype:
    """
    The alive entries of the super-network as a genotype, edges ordered by
    (k, j, i, o).

    Raises:
        DeadNodeError: If some computing node has no alive entry
    """
    cells = []
    for spec in net.plan:
        edges = []
        for j in spec.computing_nodes:
            mask = net.arch.alive[(spec.index, j)]
            if not mask.any():
                raise DeadNodeError(f"cell {spec.index} node {j} has no alive incoming entry")
            for r, o in zip(*np.nonzero(mask)):
                edges.append(GenotypeEdge(int(r) + 1, j, net.space[int(o)]))
        cells.append(GenotypeCell(spec.index, spec.kind, tuple(edges)))
    return Genotype(net.space.space_id, net.node_count, tuple(cells))


def constrained_discretize(net: SuperNetwork) -> Genotype:
    """
    Classic DARTS discretization: per edge keep the operator with the
    largest edge-wise weight a^MAX, per node keep the two predecessor edges
    with the largest a^MAX.

    Raises:
        GenotypeError: If a computing node has fewer than 2 usable predecessors
    """
    cells = []
    for spec in net.plan:
        edges = []
        for j in spec.computing_nodes:
            candidates = []
            for i in range(1, j):
                if not net.arch.alive[(spec.index, j)][i - 1].any():
                    continue
                weights = edgewise_weights(net.arch, spec.index, i, j)
                best = int(np.argmax(weights))
                candidates.append((float(weights[best]), i, best))
            if len(candidates) < 2:
                raise GenotypeError(
                    f"cell {spec.index} node {j} has {len(candidates)} usable predecessors; "
                    f"the constrained rule needs 2"
                )
            # Largest a^MAX first, lower predecessor index on ties
            chosen = sorted(candidates, key=lambda c: (-c[0], c[1]))[:2]
            for _, i, o in sorted(chosen, key=lambda c: c[1]):
                edges.append(GenotypeEdge(i, j, net.space[o]))
        cells.append(GenotypeCell(spec.index, spec.kind, tuple(edges)))
    return Genotype(net.space.space_id, net.node_count, tuple(cells))


def rebuild_discrete(genotype: Genotype, channels: int, classes: int, in_channels: int = 3,
                     rng: Optional[np.random.Generator] = None) -> DiscreteNetwork:
    """
    Build a freshly initialized trainable network for a genotype.

    Raises:
        GenotypeError: If the genotype is invalid
    """
    return DiscreteNetwork(genotype, channels, classes, in_channels, rng)
