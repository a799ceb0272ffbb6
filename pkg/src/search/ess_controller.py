"""
ESS Controller Module
Entropy-based super-network shrinking: the search loop.

Each of R_init rounds:
1. Reinitialize the model parameters θ (α, alive masks and λ persist)
2. Warm-up for T_warm epochs: one Adam step on θ and one on α per batch,
   both against the cross-entropy loss only
3. Architecture optimization for the remaining epochs: one Adam step on α
   against L_All = L_CE + Σ_k λ_k·H_cell(k) with θ frozen, then dynamic
   discretization, then per-cell feedback on λ_k:
       reduction E_prev − E_curr < ΔE  →  λ_k ← c1·λ_k
       otherwise                       →  λ_k ← c2·λ_k
4. Archive a snapshot of α and the alive masks, labeled by cumulative epoch

The controller itself never touches the filesystem; a SearchObserver gets
every report row, pruning event and snapshot.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config.run_config import EssConfig
from src.analysis.entropy import (
    cell_entropy,
    cell_entropy_tensor,
    entropy_grad_analytic,
    expected_entropy_reduction,
    flatten_cell,
    lambda_lower_bound,
    total_entropy,
)
from src.autodiff import functional as F
from src.autodiff.optim import Adam
from src.autodiff.tensor import Tensor, backward
from src.errors import DeadNodeError, NumericalError
from src.search.discretizer import PrunedEntry, dynamic_discretize, extract_genotype
from src.search_space.genotype import Genotype
from src.search_space.supernet import NodeKey, SuperNetwork

logger = logging.getLogger(__name__)


class SearchPhase(str, Enum):
    WARMUP = "warmup"
    ARCH_OPT = "arch_opt"


@dataclass
class ArchiveEntry:
    """One archived architecture (α values and alive masks after a round)."""
    label: str
    round: int
    epoch: int
    alpha: Dict[NodeKey, np.ndarray]
    alive: Dict[NodeKey, np.ndarray]
    genotype: Genotype

    @property
    def alive_count(self) -> int:
        return int(sum(mask.sum() for mask in self.alive.values()))


@dataclass
class EssState:
    """
    Mutable controller state.

    Attributes:
        lambdas: Per-cell entropy coefficient λ_k (always > 0)
        prev_entropy: Per-cell entropy E_k of the previous arch-opt step; None
            until the first arch-opt step of a round measures it
        phase: Current phase
        round: Current round (1-based, 0 before the search starts)
        epoch: Cumulative epoch (1-based)
        step: Global step counter
        archive: Snapshots of completed rounds
        delta_e: Per-step entropy budget ΔE (set when the search starts)
        initial_entropy: Total entropy when the search started
        max_grad_ce_norm: Largest ‖∇_α L_CE‖ seen during arch-opt
        completed_rounds: Rounds whose snapshot is archived
    """
    lambdas: Dict[int, float]
    prev_entropy: Dict[int, Optional[float]]
    phase: SearchPhase = SearchPhase.WARMUP
    round: int = 0
    epoch: int = 0
    step: int = 0
    archive: List[ArchiveEntry] = field(default_factory=list)
    delta_e: Optional[float] = None
    initial_entropy: Optional[float] = None
    max_grad_ce_norm: float = 0.0
    completed_rounds: int = 0

    @classmethod
    def initial(cls, cells: Iterable[int], lambda_init: float) -> "EssState":
        cells = list(cells)
        return cls(lambdas={k: lambda_init for k in cells}, prev_entropy={k: None for k in cells})


@dataclass
class EntropyRow:
    """
    One per-cell report row. The first eight fields form the entropy CSV;
    the rest are stored diagnostics (NaN during warm-up).
    """
    round: int
    epoch: int
    step: int
    cell: int
    entropy: float
    lam: float
    loss_ce: float
    loss_all: float
    phase: str = SearchPhase.WARMUP.value
    grad_ce_norm: float = math.nan
    lambda_bound: float = math.nan
    delta_h: float = math.nan


@dataclass
class StepResult:
    loss_ce: float
    loss_all: float
    entropy_before: Dict[int, float]
    entropy_after: Dict[int, float]
    lambdas_used: Dict[int, float]
    pruned: List[PrunedEntry] = field(default_factory=list)
    grad_ce_norm: Dict[int, float] = field(default_factory=dict)
    lambda_bound: Dict[int, float] = field(default_factory=dict)


class SearchObserver:
    """Receives search events; every hook is a no-op by default."""

    def on_rows(self, rows: Sequence[EntropyRow]):
        pass

    def on_prune(self, step: int, entries: Sequence[PrunedEntry]):
        pass

    def on_snapshot(self, entry: ArchiveEntry):
        pass

    def on_round_end(self, controller: "EssController"):
        pass


def adjust_lambda(state: EssState, k: int, e_prev: float, e_curr: float, delta_e: float,
                  c1: float, c2: float) -> float:
    """
    Feedback update of λ_k: grow by c1 when the entropy fell by less than
    ΔE (strictly), shrink by c2 otherwise. Also records e_curr as the new
    previous entropy of cell k.

    Returns:
        The new λ_k
    """
    if e_prev - e_curr < delta_e:
        state.lambdas[k] *= c1
    else:
        state.lambdas[k] *= c2
    state.prev_entropy[k] = e_curr
    return state.lambdas[k]


class EssController:
    """
    Drives one search over a super-network.

    Args:
        net: The super-network (α persists across rounds)
        config: Controller settings
        loader: Training batches; one pass is one epoch
        observer: Event sink (report rows, pruning, snapshots)
        state: Existing state when resuming; a fresh state otherwise
    """

    def __init__(self, net: SuperNetwork, config: EssConfig, loader, observer: Optional[SearchObserver] = None,
                 state: Optional[EssState] = None):
        config.validate(op_count=len(net.space))
        self.net = net
        self.config = config
        self.loader = loader
        self.observer = observer or SearchObserver()
        self.state = state or EssState.initial(net.arch.cells(), config.lambda_init)
        self.theta_optimizer = Adam(net.model_parameters(), lr=config.eta_theta, weight_decay=config.wd_theta)
        self.alpha_optimizer = Adam(net.arch_parameters(), lr=config.eta_alpha, weight_decay=config.wd_alpha)

    @property
    def steps_per_epoch(self) -> int:
        return len(self.loader)

    # ==================== Single steps ====================

    def _cell_entropies(self) -> Dict[int, float]:
        return {k: cell_entropy(self.net.arch, k) for k in self.net.arch.cells()}

    def _forward_ce(self, images: np.ndarray, labels: np.ndarray) -> Tensor:
        logits = self.net(Tensor(images))
        return F.cross_entropy(logits, labels)

    def warmup_step(self, images: np.ndarray, labels: np.ndarray) -> StepResult:
        """One Adam step on θ (and on α unless disabled) against CE only."""
        before = self._cell_entropies()
        self.theta_optimizer.zero_grad()
        self.alpha_optimizer.zero_grad()
        loss = self._forward_ce(images, labels)
        backward(loss)
        self.theta_optimizer.step()
        if self.config.warmup_updates_alpha:
            self.alpha_optimizer.step()
        ce = loss.item()
        return StepResult(ce, ce, before, self._cell_entropies(), dict(self.state.lambdas))

    def arch_opt_step(self, images: np.ndarray, labels: np.ndarray) -> StepResult:
        """
        One α step on L_All with θ frozen, then dynamic discretization and
        the per-cell λ feedback.

        Raises:
            NumericalError: If the loss is not finite
        """
        arch = self.net.arch
        state = self.state
        before = self._cell_entropies()
        for k, value in before.items():
            if state.prev_entropy[k] is None:
                state.prev_entropy[k] = value
        lambdas_used = dict(state.lambdas)

        self.theta_optimizer.zero_grad()
        self.alpha_optimizer.zero_grad()
        if self.config.archopt_updates_theta:
            loss_ce, loss_all = self._arch_loss(images, labels, lambdas_used)
        else:
            with self.net.theta_frozen():
                loss_ce, loss_all = self._arch_loss(images, labels, lambdas_used)
        if not math.isfinite(loss_all):
            raise NumericalError(f"non-finite search loss {loss_all} at step {state.step}")

        # CE share of the α gradient, per cell, recovered from the total gradient
        grad_h, grad_ce_norm = {}, {}
        ce_weight = self.config.ce_weight
        for k in arch.cells():
            grad_h[k] = flatten_cell(entropy_grad_analytic(arch, k))
            total = flatten_cell({j: _grad_or_zero(arch.alpha[(k, j)]) for j in arch.nodes_of(k)})
            weighted_ce = total - lambdas_used[k] * grad_h[k]
            # ∇CE is unrecoverable when the CE term is switched off
            grad_ce_norm[k] = float(np.linalg.norm(weighted_ce / ce_weight)) if ce_weight else 0.0
        state.max_grad_ce_norm = max(state.max_grad_ce_norm, max(grad_ce_norm.values()))

        self.alpha_optimizer.step()
        bounds = {k: self._lambda_bound(k, grad_h[k], lambdas_used[k]) for k in arch.cells()}
        if self.config.archopt_updates_theta:
            self.theta_optimizer.step()
        pruned = dynamic_discretize(self.net, self.config.epsilon)

        after = self._cell_entropies()
        for k in arch.cells():
            adjust_lambda(state, k, state.prev_entropy[k], after[k], state.delta_e, self.config.c1, self.config.c2)
        return StepResult(loss_ce, loss_all, before, after, lambdas_used, pruned, grad_ce_norm, bounds)

    def _lambda_bound(self, k: int, grad_h: np.ndarray, lam: float) -> float:
        """
        λ lower bound of cell k for the α update just applied, measured in
        Adam's geometry: the update was lr·P·(g + λ∇H) with P the diagonal
        metric and g everything else (weighted ∇CE, carried momentum, decay).
        """
        arch = self.net.arch
        geometry = {j: self.alpha_optimizer.step_geometry(arch.alpha[(k, j)]) for j in arch.nodes_of(k)}
        gradient = flatten_cell({j: g for j, (g, _) in geometry.items()})
        metric = flatten_cell({j: m for j, (_, m) in geometry.items()})
        return lambda_lower_bound(grad_h, gradient - lam * grad_h, metric)

    def _arch_loss(self, images: np.ndarray, labels: np.ndarray, lambdas: Dict[int, float]) -> Tuple[float, float]:
        ce = self._forward_ce(images, labels)
        terms = [ce * self.config.ce_weight]
        for k in self.net.arch.cells():
            terms.append(cell_entropy_tensor(self.net.arch, k) * lambdas[k])
        total = F.add_n(terms)
        backward(total)
        return ce.item(), total.item()

    def reinit_model_params(self):
        """Redraw θ and forget θ's optimizer moments; α, masks, λ and archive stay."""
        self.net.reinit_model_params()
        self.theta_optimizer.reset()

    # ==================== Search loop ====================

    def start(self):
        """Fix the initial entropy and ΔE (no-op when resuming)."""
        state = self.state
        if state.initial_entropy is None:
            state.initial_entropy = total_entropy(self.net.arch)
        if state.delta_e is None:
            state.delta_e = self.config.delta_e or expected_entropy_reduction(
                state.initial_entropy, self.net.cell_count, self.steps_per_epoch,
                self.config.t_search, self.config.r_init,
            )
        logger.info(f"Search start: total entropy {state.initial_entropy:.5f}, ΔE={state.delta_e:.6g}, "
                    f"{self.steps_per_epoch} steps/epoch, {self.config.r_init} rounds × {self.config.t_search} "
                    f"epochs ({self.config.warm_epochs} warm-up)")

    def run(self) -> List[ArchiveEntry]:
        """
        Run the remaining rounds.

        Returns:
            The archive, one entry per round

        Raises:
            DeadNodeError: If a computing node lost every entry
        """
        self.start()
        config = self.config
        for r in range(self.state.completed_rounds + 1, config.r_init + 1):
            self._run_round(r)
        logger.info(f"Search finished: total entropy {total_entropy(self.net.arch):.5f} "
                    f"(started at {self.state.initial_entropy:.5f}), max ‖∇CE‖={self.state.max_grad_ce_norm:.4g}")
        return self.state.archive

    def _run_round(self, r: int):
        config, state = self.config, self.state
        state.round = r
        state.prev_entropy = {k: None for k in state.lambdas}
        self.reinit_model_params()
        logger.info(f"Round {r}/{config.r_init}: θ reinitialized, {self.net.arch.alive_count()} entries alive")

        for e in range(1, config.t_search + 1):
            state.epoch = (r - 1) * config.t_search + e
            state.phase = SearchPhase.WARMUP if e <= config.warm_epochs else SearchPhase.ARCH_OPT
            losses = []
            for images, labels in self.loader:
                state.step += 1
                if state.phase is SearchPhase.WARMUP:
                    result = self.warmup_step(images, labels)
                else:
                    result = self.arch_opt_step(images, labels)
                losses.append(result.loss_ce)
                self._report(result)
            entropies = self._cell_entropies()
            logger.info(
                f"Epoch {state.epoch} ({state.phase.value}): CE {np.mean(losses):.4f}, "
                f"entropy {sum(entropies.values()):.4f}, alive {self.net.arch.alive_count()}, "
                f"λ {', '.join(f'{state.lambdas[k]:.3g}' for k in sorted(state.lambdas))}"
            )
            if state.phase is SearchPhase.ARCH_OPT and self._below_h_min(entropies):
                logger.info(f"Every cell entropy is at most h_min={config.h_min}; ending round {r} early")
                break

        self._snapshot(r)
        state.completed_rounds = r
        self.observer.on_round_end(self)

    def _below_h_min(self, entropies: Dict[int, float]) -> bool:
        h_min = self.config.h_min
        return h_min is not None and all(value <= h_min for value in entropies.values())

    def _report(self, result: StepResult):
        state = self.state
        rows = []
        for k in sorted(result.entropy_after):
            row = EntropyRow(
                round=state.round, epoch=state.epoch, step=state.step, cell=k,
                entropy=result.entropy_after[k], lam=result.lambdas_used[k],
                loss_ce=result.loss_ce, loss_all=result.loss_all, phase=state.phase.value,
                delta_h=result.entropy_after[k] - result.entropy_before[k],
            )
            if k in result.grad_ce_norm:
                row.grad_ce_norm = result.grad_ce_norm[k]
                row.lambda_bound = result.lambda_bound[k]
            rows.append(row)
        logger.debug(f"step {state.step}: CE {result.loss_ce:.5f}, L_All {result.loss_all:.5f}")
        self.observer.on_rows(rows)
        if result.pruned:
            self.observer.on_prune(state.step, result.pruned)

    def _snapshot(self, r: int) -> ArchiveEntry:
        try:
            genotype = extract_genotype(self.net)
        except DeadNodeError as e:
            logger.error(f"Snapshot after round {r} failed: {e}")
            raise
        alpha, alive = self.net.arch.snapshot()
        cumulative = r * self.config.t_search
        entry = ArchiveEntry(f"{cumulative}E", r, cumulative, alpha, alive, genotype)
        self.state.archive.append(entry)
        logger.info(f"Snapshot {entry.label}: {entry.alive_count} entries alive, {genotype.edge_count} edges")
        self.observer.on_snapshot(entry)
        return entry


def _grad_or_zero(param) -> np.ndarray:
    return param.grad if param.grad is not None else np.zeros_like(param.data)


def run_search(net: SuperNetwork, loader, config: EssConfig, observer: Optional[SearchObserver] = None,
               state: Optional[EssState] = None) -> List[ArchiveEntry]:
    """
    Run ESS on a super-network.

    Args:
        net: Freshly initialized super-network (or a restored one with `state`)
        loader: Training batches, one pass per epoch
        config: Controller settings
        observer: Event sink
        state: Restored state to resume from

    Returns:
        The archive with one entry per round
    """
    return EssController(net, config, loader, observer, state).run()


def theorem_check(rows: Iterable[EntropyRow], min_entropy: float = 0.05, margin: float = 10.0,
                  min_grad_norm: float = 1e-12) -> Dict:
    """
    Among arch-opt rows whose λ clears the first-order lower bound with a
    margin (λ ≥ bound + margin·|bound|) and whose entropy before the step
    exceeded min_entropy, the share that saw the cell entropy fall.

    Rows whose ‖∇CE‖ is at most min_grad_norm are left out: there the CE
    signal is numerically zero and the bound is rounding noise.

    Returns:
        Dictionary with qualifying, decreased and fraction (NaN when none qualify)
    """
    qualifying = decreased = 0
    for row in rows:
        if row.phase != SearchPhase.ARCH_OPT.value or not math.isfinite(row.lambda_bound):
            continue
        if not row.grad_ce_norm > min_grad_norm:
            continue
        if row.entropy - row.delta_h <= min_entropy:
            continue
        if row.lam < row.lambda_bound + margin * abs(row.lambda_bound):
            continue
        qualifying += 1
        if row.delta_h < 0:
            decreased += 1
    fraction = decreased / qualifying if qualifying else math.nan
    return {"qualifying": qualifying, "decreased": decreased, "fraction": fraction}
