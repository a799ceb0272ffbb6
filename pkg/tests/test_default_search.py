"""
End-to-end checks on the default desk-scale search: L=4, N=5, O2,
2 rounds × 8 epochs on synthetic 4-class 8×8 images, for several seeds.
"""

import logging
import math
import time

import numpy as np
import pytest

import src.main as cli
from config.run_config import RunConfig
from src.database.checkpoint import load_checkpoint, restore_state, restore_supernet
from src.database.run_store import RunStore
from src.search.ess_controller import SearchPhase, theorem_check

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2, 3)

# α = 0 on an O2 cell of 5 nodes: node 3 mixes 2×2 entries, node 4 mixes 3×2
INITIAL_CELL_ENTROPY = math.log(4) + math.log(6)


@pytest.fixture(scope='module')
def default_runs(tmp_path_factory):
    runs = {}
    for seed in SEEDS:
        out_dir = tmp_path_factory.mktemp(f'default-seed{seed}')
        config = RunConfig(seed=seed).validate()
        started = time.perf_counter()
        cli.FxDartsApp().search(config, out_dir)
        elapsed = time.perf_counter() - started

        checkpoint = load_checkpoint(out_dir / 'checkpoints' / f'round_{config.ess.r_init:02d}.npz')
        store = RunStore(out_dir / cli.Config.DATABASE_NAME)
        runs[seed] = {
            'elapsed': elapsed,
            'rows': store.get_entropy_rows(),
            'snapshots': store.get_snapshots(),
            'state': restore_state(checkpoint, restore_supernet(checkpoint)),
        }
    yield runs
    root = logging.getLogger()
    for handler in list(root.handlers):
        if handler.get_name() == 'fxdarts-file':
            root.removeHandler(handler)
            handler.close()


def test_default_run_finishes_within_ten_minutes(default_runs):
    for seed, run in default_runs.items():
        assert run['elapsed'] < 600, f"seed {seed} took {run['elapsed']:.0f}s"


def test_every_cell_ends_below_forty_percent_of_its_initial_entropy(default_runs):
    for seed, run in default_runs.items():
        final = {row.cell: row.entropy for row in run['rows']}
        assert sorted(final) == [1, 2, 3, 4]
        for cell, entropy in final.items():
            assert entropy / INITIAL_CELL_ENTROPY < 0.4, f"seed {seed} cell {cell}: {entropy:.3f}"


def test_alive_mask_strictly_shrinks_across_snapshots(default_runs):
    for seed, run in default_runs.items():
        archive = run['state'].archive
        assert len(archive) == 2
        counts = [sum(mask.size for mask in archive[0].alive.values())]
        for previous, entry in zip([None] + archive[:-1], archive):
            if previous is not None:
                for key, mask in entry.alive.items():
                    assert not np.any(mask & ~previous.alive[key]), f"seed {seed} {entry.label} {key}"
            counts.append(entry.alive_count)
        assert all(later < earlier for earlier, later in zip(counts, counts[1:])), f"seed {seed}: {counts}"


def test_arch_opt_phases_track_the_entropy_budget(default_runs):
    for seed, run in default_runs.items():
        delta_e = run['state'].delta_e
        arch_rows = [row for row in run['rows'] if row.phase == SearchPhase.ARCH_OPT.value]
        for r in (1, 2):
            reductions = [-row.delta_h for row in arch_rows if row.round == r]
            assert reductions
            mean = float(np.mean(reductions))
            assert delta_e / 3 <= mean <= 3 * delta_e, f"seed {seed} round {r}: {mean / delta_e:.2f}·ΔE"
        assert all(0 < row.lam < math.inf for row in arch_rows)


def test_snapshot_params_never_grow_and_shrink_at_least_once(default_runs):
    for seed, run in default_runs.items():
        params = [snapshot['params'] for snapshot in run['snapshots']]
        assert len(params) == 2
        assert all(later <= earlier for earlier, later in zip(params, params[1:])), f"seed {seed}: {params}"
        assert any(later < earlier for earlier, later in zip(params, params[1:])), f"seed {seed}: {params}"


def test_entropy_falls_whenever_lambda_clears_its_bound(default_runs):
    rows = [row for run in default_runs.values() for row in run['rows']]
    result = theorem_check(rows)
    assert result['qualifying'] > 0
    assert result['fraction'] >= 0.99, result
