"""
Search Visualization Module
Creates charts of a finished (or running) search from its run store.
"""

import logging
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use('Agg')  # headless: figures are only ever saved
import matplotlib.pyplot as plt

from src.database.run_store import RunStore

logger = logging.getLogger(__name__)


class SearchVisualizer:
    """
    Creates visualizations of search progress.

    This class can generate:
    - Cell entropy over training steps
    - λ over training steps
    - Params/FLOPs trend across archived snapshots
    """

    def __init__(self, store: RunStore):
        """
        Args:
            store: Run store to read from
        """
        self.store = store
        plt.style.use('seaborn-v0_8-darkgrid' if 'seaborn-v0_8-darkgrid' in plt.style.available else 'default')

    def _per_cell_plot(self, column: str, ylabel: str, title: str, save_path: Optional[Path], log_scale: bool = False):
        frame = self.store.get_entropy_frame()
        if frame.empty:
            logger.warning("No entropy rows to plot")
            return None

        fig, ax = plt.subplots(figsize=(10, 6))
        for cell, rows in frame.groupby('cell'):
            ax.plot(rows['step'], rows[column], label=f'cell {cell}', linewidth=1.2)
        # Round boundaries
        starts = frame.groupby('round')['step'].min().iloc[1:]
        for step in starts:
            ax.axvline(step, color='gray', linestyle='--', linewidth=0.8)
        if log_scale:
            ax.set_yscale('log')
        ax.set_xlabel('Step')
        ax.set_ylabel(ylabel)
        ax.set_title(title, fontsize=14, fontweight='bold')
        ax.legend(ncol=2, fontsize=8)
        fig.tight_layout()

        if save_path:
            fig.savefig(save_path, dpi=150, bbox_inches='tight')
            logger.info(f"Saved chart to {save_path}")
        plt.close(fig)
        return fig

    def plot_entropy(self, save_path: Optional[Path] = None):
        """
        Line chart of every cell's sparsity entropy against the global step.

        Args:
            save_path: Optional path to save the figure
        """
        return self._per_cell_plot('entropy', 'Cell entropy (nats)', 'Cell-level sparsity entropy', save_path)

    def plot_lambda(self, save_path: Optional[Path] = None):
        """Line chart (log scale) of every cell's λ against the global step."""
        return self._per_cell_plot('lambda', 'λ', 'Entropy coefficient per cell', save_path, log_scale=True)

    def plot_complexity_trend(self, save_path: Optional[Path] = None):
        """
        Bar chart of params (and FLOPs on a second axis) per archived snapshot.

        Args:
            save_path: Optional path to save the figure
        """
        snapshots = self.store.get_snapshots()
        if not snapshots:
            logger.warning("No snapshots to plot")
            return None

        labels = [s['label'] for s in snapshots]
        positions = range(len(labels))
        fig, ax = plt.subplots(figsize=(8, 5))
        ax.bar([p - 0.2 for p in positions], [s['params'] for s in snapshots], width=0.4,
               color='#3498db', label='Params')
        ax.set_ylabel('Params')
        ax.set_xticks(list(positions))
        ax.set_xticklabels(labels)

        ax_flops = ax.twinx()
        ax_flops.bar([p + 0.2 for p in positions], [s['flops'] for s in snapshots], width=0.4,
                     color='#e67e22', label='FLOPs')
        ax_flops.set_ylabel('FLOPs')
        ax.set_title('Snapshot complexity', fontsize=14, fontweight='bold')
        fig.legend(loc='upper right')
        fig.tight_layout()

        if save_path:
            fig.savefig(save_path, dpi=150, bbox_inches='tight')
            logger.info(f"Saved chart to {save_path}")
        plt.close(fig)
        return fig
