"""
Run Store Module
Stores everything a search run reports in one SQLite file per run
directory: the per-step entropy report, pruning events and the archived
snapshots with their complexity.

Uses SQLite - a simple, file-based database that doesn't require a server.
The entropy CSV is exported from here so that identical runs give
byte-identical files.
"""

import logging
import math
import sqlite3
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from src.analysis.complexity import complexity_report
from src.search.discretizer import PrunedEntry
from src.search.ess_controller import ArchiveEntry, EntropyRow, SearchObserver

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["round", "epoch", "step", "cell", "entropy", "lambda", "loss_ce", "loss_all"]
CSV_FLOAT_FORMAT = "%.10g"


class RunStore:
    """
    Manages the SQLite database of one run.

    Tables:
    - entropy_report: one row per (step, cell)
    - pruning_log: one row per pruned (cell, node, predecessor, operator)
    - snapshots: one row per archived round
    """

    def __init__(self, db_path: Path):
        """
        Args:
            db_path: Path to the SQLite database file (created if missing)
        """
        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self.create_tables()
        logger.debug(f"Run store at: {self.db_path}")

    def get_connection(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.db_path)
        # Rows behave like dictionaries
        conn.row_factory = sqlite3.Row
        return conn

    def create_tables(self):
        conn = self.get_connection()
        cursor = conn.cursor()

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS entropy_report (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                round INTEGER NOT NULL,
                epoch INTEGER NOT NULL,
                step INTEGER NOT NULL,
                cell INTEGER NOT NULL,
                phase TEXT NOT NULL,
                entropy REAL NOT NULL,
                lambda REAL NOT NULL,
                loss_ce REAL NOT NULL,
                loss_all REAL NOT NULL,
                grad_ce_norm REAL,
                lambda_bound REAL,
                delta_h REAL,
                UNIQUE(step, cell)
            )
        ''')

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS pruning_log (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                step INTEGER NOT NULL,
                cell INTEGER NOT NULL,
                node INTEGER NOT NULL,
                predecessor INTEGER NOT NULL,
                op TEXT NOT NULL,
                weight REAL NOT NULL,
                UNIQUE(cell, node, predecessor, op)
            )
        ''')

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS snapshots (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                label TEXT UNIQUE NOT NULL,
                round INTEGER NOT NULL,
                epoch INTEGER NOT NULL,
                alive_count INTEGER NOT NULL,
                edge_count INTEGER NOT NULL,
                params INTEGER,
                flops INTEGER,
                genotype TEXT NOT NULL
            )
        ''')

        cursor.execute('CREATE INDEX IF NOT EXISTS idx_entropy_cell_step ON entropy_report(cell, step)')
        cursor.execute('CREATE INDEX IF NOT EXISTS idx_pruning_step ON pruning_log(step)')
        cursor.execute('CREATE INDEX IF NOT EXISTS idx_snapshots_round ON snapshots(round)')

        conn.commit()
        conn.close()

    # ==================== Writes ====================

    def insert_entropy_rows(self, rows: Sequence[EntropyRow]) -> int:
        """
        Insert report rows; rows already stored for the same (step, cell)
        are ignored.

        Returns:
            Number of rows inserted
        """
        conn = self.get_connection()
        before = conn.total_changes
        conn.executemany('''
            INSERT OR IGNORE INTO entropy_report (
                round, epoch, step, cell, phase, entropy, lambda, loss_ce, loss_all,
                grad_ce_norm, lambda_bound, delta_h
            ) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
        ''', [
            (row.round, row.epoch, row.step, row.cell, row.phase, row.entropy, row.lam, row.loss_ce, row.loss_all,
             _nullable(row.grad_ce_norm), _nullable(row.lambda_bound), _nullable(row.delta_h))
            for row in rows
        ])
        conn.commit()
        inserted = conn.total_changes - before
        conn.close()
        return inserted

    def insert_pruning_events(self, step: int, entries: Sequence[PrunedEntry]) -> int:
        conn = self.get_connection()
        before = conn.total_changes
        conn.executemany('''
            INSERT OR IGNORE INTO pruning_log (step, cell, node, predecessor, op, weight)
            VALUES (?, ?, ?, ?, ?, ?)
        ''', [(step, e.cell, e.node, e.predecessor, e.op.value, e.weight) for e in entries])
        conn.commit()
        inserted = conn.total_changes - before
        conn.close()
        return inserted

    def insert_snapshot(self, entry: ArchiveEntry, params: Optional[int] = None, flops: Optional[int] = None) -> bool:
        """
        Returns:
            True if stored, False if a snapshot with this label already exists
        """
        conn = self.get_connection()
        cursor = conn.cursor()
        cursor.execute('''
            INSERT OR IGNORE INTO snapshots (label, round, epoch, alive_count, edge_count, params, flops, genotype)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?)
        ''', (entry.label, entry.round, entry.epoch, entry.alive_count, entry.genotype.edge_count,
              params, flops, entry.genotype.to_json()))
        conn.commit()
        stored = cursor.rowcount == 1
        conn.close()
        if not stored:
            logger.debug(f"Snapshot {entry.label} already in store")
        return stored

    def truncate_after(self, step: int, completed_rounds: int):
        """Drop rows written after `step` and snapshots past `completed_rounds` (used on resume)."""
        conn = self.get_connection()
        conn.execute('DELETE FROM entropy_report WHERE step > ?', (step,))
        conn.execute('DELETE FROM pruning_log WHERE step > ?', (step,))
        conn.execute('DELETE FROM snapshots WHERE round > ?', (completed_rounds,))
        conn.commit()
        conn.close()

    # ==================== Queries ====================

    def get_entropy_rows(self, phase: Optional[str] = None) -> List[EntropyRow]:
        conn = self.get_connection()
        query = 'SELECT * FROM entropy_report'
        params: Tuple = ()
        if phase is not None:
            query += ' WHERE phase = ?'
            params = (phase,)
        rows = conn.execute(query + ' ORDER BY step, cell', params).fetchall()
        conn.close()
        return [
            EntropyRow(
                round=row['round'], epoch=row['epoch'], step=row['step'], cell=row['cell'],
                entropy=row['entropy'], lam=row['lambda'], loss_ce=row['loss_ce'], loss_all=row['loss_all'],
                phase=row['phase'], grad_ce_norm=_nan_if_null(row['grad_ce_norm']),
                lambda_bound=_nan_if_null(row['lambda_bound']), delta_h=_nan_if_null(row['delta_h']),
            )
            for row in rows
        ]

    def get_entropy_frame(self) -> pd.DataFrame:
        conn = self.get_connection()
        frame = pd.read_sql_query(
            f'SELECT {", ".join(CSV_COLUMNS)} FROM entropy_report ORDER BY step, cell', conn
        )
        conn.close()
        return frame

    def get_snapshots(self) -> List[Dict]:
        conn = self.get_connection()
        rows = conn.execute('SELECT * FROM snapshots ORDER BY round').fetchall()
        conn.close()
        return [dict(row) for row in rows]

    def get_pruning_log(self) -> List[Dict]:
        conn = self.get_connection()
        rows = conn.execute('SELECT * FROM pruning_log ORDER BY step, cell, node, predecessor, op').fetchall()
        conn.close()
        return [dict(row) for row in rows]

    def export_entropy_csv(self, path: Path) -> int:
        """
        Write the entropy CSV (fixed header, fixed float format).

        Returns:
            Number of data rows written
        """
        frame = self.get_entropy_frame()
        if frame.empty:
            logger.warning(f"No entropy rows to export to {path}")
        frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        return len(frame)


def _nullable(value: float) -> Optional[float]:
    return None if value is None or math.isnan(value) else value


def _nan_if_null(value: Optional[float]) -> float:
    return math.nan if value is None else value


class RunRecorder(SearchObserver):
    """
    Search observer that persists every event to a RunStore and calls
    `on_round_end` (typically a checkpoint writer) after each round.

    Args:
        store: Destination store
        channels, classes, input_hw, in_channels: Dims used to price snapshots
        on_round_end: Optional callback receiving the controller
    """

    def __init__(self, store: RunStore, channels: int, classes: int, input_hw: Tuple[int, int], in_channels: int,
                 on_round_end: Optional[Callable] = None):
        self.store = store
        self.channels = channels
        self.classes = classes
        self.input_hw = input_hw
        self.in_channels = in_channels
        self.round_end_callback = on_round_end

    def on_rows(self, rows: Sequence[EntropyRow]):
        self.store.insert_entropy_rows(rows)

    def on_prune(self, step: int, entries: Sequence[PrunedEntry]):
        self.store.insert_pruning_events(step, entries)

    def on_snapshot(self, entry: ArchiveEntry):
        report = complexity_report(entry.genotype, self.channels, self.classes, self.input_hw, self.in_channels)
        self.store.insert_snapshot(entry, report.params, report.flops)
        logger.info(f"Snapshot {entry.label}: {report.params} params, {report.flops} FLOPs")

    def on_round_end(self, controller):
        if self.round_end_callback is not None:
            self.round_end_callback(controller)
