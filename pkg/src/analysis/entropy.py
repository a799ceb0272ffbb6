"""
Sparsity Entropy Module
Entropy of the node-wise contribution weights, its analytic gradient, the
per-step entropy-reduction budget ΔE and the λ formulas used to verify the
shrinking controller.

All logarithms are natural (entropies in nats); 0·log 0 is taken as 0.
Entropies only range over alive entries, so after pruning the softmax
renormalizes and the entropy stays well defined.

    H_node(j) = −Σ_(i,o) a log a          (0 ≤ H_node ≤ log M_j)
    H_cell(k) = Σ_j H_node(k, j)
    ∂H_node/∂α_(i,o) = −a_(i,o) (log a_(i,o) + H_node)
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.autodiff import functional as F
from src.autodiff.tensor import Tensor
from src.search_space.supernet import ArchParams, node_weight_matrix

logger = logging.getLogger(__name__)

WeightsLike = Union[Mapping[object, float], Sequence[float], np.ndarray]


@dataclass(frozen=True)
class EntropySnapshot:
    """Per-cell entropies at one step."""
    step: int
    per_cell: Tuple[float, ...]

    @property
    def total(self) -> float:
        return float(sum(self.per_cell))


def _as_array(weights: WeightsLike) -> np.ndarray:
    if isinstance(weights, Mapping):
        return np.asarray(list(weights.values()), dtype=np.float64)
    return np.asarray(weights, dtype=np.float64).reshape(-1)


def node_entropy(weights: WeightsLike) -> float:
    """
    Shannon entropy −Σ w log w of one node's contribution weights.

    Args:
        weights: Map (i, o) → weight, or a flat sequence of weights

    Raises:
        ValueError: If a weight is negative or the weights don't sum to 1
    """
    w = _as_array(weights)
    if np.any(w < 0):
        raise ValueError("node_entropy received a negative weight")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"node weights must sum to 1, got {w.sum():.12f}")
    positive = w[w > 0]
    return float(-np.sum(positive * np.log(positive))) + 0.0


def cell_entropy(arch: ArchParams, k: int) -> float:
    """Σ_j H_node(k, j) over the computing nodes of cell k."""
    return float(sum(node_entropy(node_weight_matrix(arch, k, j)) for j in arch.nodes_of(k)))


def total_entropy(arch: ArchParams) -> float:
    return float(sum(cell_entropy(arch, k) for k in arch.cells()))


def entropy_snapshot(arch: ArchParams, step: int) -> EntropySnapshot:
    return EntropySnapshot(step, tuple(cell_entropy(arch, k) for k in arch.cells()))


def entropy_upper_bound(arch: ArchParams, k: int) -> float:
    """Σ_j log(alive entries at node j): the largest entropy cell k can reach."""
    return float(sum(math.log(max(int(arch.alive[(k, j)].sum()), 1)) for j in arch.nodes_of(k)))


# ==================== Differentiable entropy ====================

def node_entropy_tensor(arch: ArchParams, k: int, j: int) -> Tensor:
    """H_node(k, j) as a tensor recorded on the autodiff graph of α."""
    weights = F.masked_softmax(arch.alpha[(k, j)], mask=arch.alive[(k, j)], axis=None)
    return -F.sum_all(F.xlogx(weights))


def cell_entropy_tensor(arch: ArchParams, k: int) -> Tensor:
    terms = [node_entropy_tensor(arch, k, j) for j in arch.nodes_of(k)]
    return F.add_n(terms)


def entropy_grad_analytic(arch: ArchParams, k: int) -> Dict[int, np.ndarray]:
    """
    Closed-form ∂H_cell(k)/∂α for each computing node j of cell k.

    Returns:
        Map j → array shaped like α[k][j]; zero on pruned entries
    """
    grads = {}
    for j in arch.nodes_of(k):
        weights = node_weight_matrix(arch, k, j)
        h = node_entropy(weights)
        positive = weights > 0
        log_w = np.log(np.where(positive, weights, 1.0))
        grads[j] = np.where(positive, -weights * (log_w + h), 0.0)
    return grads


def flatten_cell(values: Mapping[int, np.ndarray]) -> np.ndarray:
    """Concatenate per-node arrays of one cell in node order."""
    return np.concatenate([np.asarray(values[j]).reshape(-1) for j in sorted(values)])


# ==================== Budget and λ formulas ====================

def expected_entropy_reduction(initial_total_entropy: float, cell_count: int, steps_per_epoch: int,
                               t_search: int, r_init: int) -> float:
    """
    ΔE = Σ_k H_init(α_k) / (L · steps_per_epoch · T_search · R_init)

    Raises:
        ValueError: If any count is not positive
    """
    denominator = cell_count * steps_per_epoch * t_search * r_init
    if cell_count <= 0 or steps_per_epoch <= 0 or t_search <= 0 or r_init <= 0:
        raise ValueError(
            f"ΔE needs positive counts, got L={cell_count}, steps={steps_per_epoch}, "
            f"T_search={t_search}, R_init={r_init}"
        )
    if initial_total_entropy < 0:
        raise ValueError("initial entropy cannot be negative")
    return float(initial_total_entropy) / denominator


def lambda_exact(delta_e: float, eta_alpha: float, grad_h: np.ndarray, grad_ce: np.ndarray) -> float:
    """
    λ = (ΔE − η‖∇H‖‖∇CE‖cosθ) / (η‖∇H‖²), the coefficient for which a plain
    gradient step reduces the cell entropy by ΔE to first order.

    Raises:
        ValueError: If ‖∇H‖ = 0 or η ≤ 0
    """
    grad_h = np.asarray(grad_h, dtype=np.float64).reshape(-1)
    grad_ce = np.asarray(grad_ce, dtype=np.float64).reshape(-1)
    norm_sq = float(grad_h @ grad_h)
    if norm_sq == 0.0:
        raise ValueError("lambda_exact is undefined when the entropy gradient is zero")
    if eta_alpha <= 0:
        raise ValueError("eta_alpha must be positive")
    return (delta_e - eta_alpha * float(grad_h @ grad_ce)) / (eta_alpha * norm_sq)


def lambda_lower_bound(grad_h: np.ndarray, grad_ce: np.ndarray, metric: Optional[np.ndarray] = None) -> float:
    """
    −‖∇CE‖cosθ / ‖∇H‖: any λ above this makes a small gradient step reduce
    the cell entropy. Infinite when ∇H = 0 (no λ helps).

    With a diagonal `metric` P the step is taken to be −η·P·(∇CE + λ∇H), as
    for a preconditioned optimizer, and the bound becomes
    −⟨∇H, P∇CE⟩ / ⟨∇H, P∇H⟩.
    """
    grad_h = np.asarray(grad_h, dtype=np.float64).reshape(-1)
    grad_ce = np.asarray(grad_ce, dtype=np.float64).reshape(-1)
    weighted_h = grad_h if metric is None else np.asarray(metric, dtype=np.float64).reshape(-1) * grad_h
    norm_sq = float(weighted_h @ grad_h)
    if norm_sq == 0.0:
        return math.inf
    return -float(weighted_h @ grad_ce) / norm_sq


if __name__ == "__main__":
    uniform = np.full(6, 1 / 6)
    print(f"H(uniform over 6) = {node_entropy(uniform):.6f}  (ln 6 = {math.log(6):.6f})")
    print(f"H(0.9, 0.1)       = {node_entropy([0.9, 0.1]):.6f}")
    print(f"ΔE (L=12, 100 steps, T=16, R=5) = "
          f"{expected_entropy_reduction(12 * 6.47390, 12, 100, 16, 5):.4e}")
