"""
Main Application Entry Point
Runs the FX-DARTS architecture search and its follow-up commands.

Usage:
    python src/main.py search --seed 0 --operator-space O2 --out runs/demo
    python src/main.py discretize runs/demo/checkpoints/round_02.npz --mode dynamic
    python src/main.py eval runs/demo/snapshots/16E.json --epochs 30
    python src/main.py report runs/demo
"""

import argparse
import json
import logging
import math
from pathlib import Path
import sys
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

# Add project root to path
sys.path.append(str(Path(__file__).parent.parent))

# Import our modules
from config.config import Config
from config.run_config import RunConfig
from src.analysis.complexity import complexity_report, structure_stats
from src.data_sources.datasets import BatchLoader, load_dataset
from src.database.checkpoint import (
    load_checkpoint,
    restore_rngs,
    restore_state,
    restore_supernet,
    save_checkpoint,
)
from src.database.run_store import RunRecorder, RunStore
from src.errors import FxDartsError
from src.search.discretizer import constrained_discretize, dynamic_discretize, extract_genotype
from src.search.ess_controller import ArchiveEntry, EssController, SearchPhase, theorem_check
from src.search.evaluator import train_discrete
from src.search_space.genotype import Genotype
from src.search_space.operators import OperatorSpace
from src.search_space.supernet import init_supernet
from src.utils.logging_setup import add_file_handler, setup_logging
from src.utils.seeding import spawn_generators
from src.visualization.genotype_graph import save_dot
from src.visualization.search_visualizer import SearchVisualizer

logger = logging.getLogger(__name__)

# Random streams whose state goes into checkpoints
CHECKPOINT_STREAMS = ("supernet", "batches", "augment")


class FxDartsApp:
    """
    Main application class that coordinates all components.

    This class brings together:
    - Dataset provisioning
    - The ESS search and its run store
    - Discretization, re-training and reporting
    """

    def __init__(self):
        """Validate process-level configuration. Directories are created by the commands that write them."""
        Config.validate()

    # ==================== search ====================

    def search(self, config: RunConfig, out_dir: Path, resume: Optional[Path] = None) -> Path:
        """
        Run (or resume) an ESS search into out_dir.

        Writes config.txt, run.db, search.log, entropy.csv,
        checkpoints/round_<r>.npz and snapshots/<label>.json|.dot.

        Returns:
            The run directory
        """
        out_dir.mkdir(parents=True, exist_ok=True)
        add_file_handler(out_dir / 'search.log')
        checkpoint = None
        if resume is not None:
            checkpoint = load_checkpoint(resume)
            config = RunConfig.from_text(checkpoint.config_text).validate()
            logger.info(f"Resuming from {resume} (round {checkpoint.meta('state', 'completed_rounds')} done)")
        config_text = config.to_text()
        (out_dir / 'config.txt').write_text(config_text, encoding='utf-8')

        # Step 1: Data
        rngs = spawn_generators(config.seed)
        dataset = load_dataset(config.dataset, rngs['data'], rngs['split'], Config.DATA_DIR)
        images, labels = dataset.train()
        loader = BatchLoader(images, labels, config.ess.batch_size, rngs['batches'],
                             augment=config.dataset.augment, augment_rng=rngs['augment'])

        # Step 2: Network and controller state
        if checkpoint is None:
            net = init_supernet(config.supernet.cells, config.supernet.nodes,
                                OperatorSpace.from_id(config.supernet.operator_space), config.supernet.channels,
                                dataset.classes, dataset.channels, rngs['supernet'], config.supernet.normalization)
            state = None
        else:
            net = restore_supernet(checkpoint, rngs['supernet'])
            state = restore_state(checkpoint, net)

        # Step 3: Storage
        store = RunStore(out_dir / Config.DATABASE_NAME)
        if state is not None:
            store.truncate_after(state.step, state.completed_rounds)

        def write_checkpoint(controller: EssController):
            path = out_dir / 'checkpoints' / f'round_{controller.state.completed_rounds:02d}.npz'
            save_checkpoint(path, controller, config_text, {name: rngs[name] for name in CHECKPOINT_STREAMS})

        recorder = RunRecorder(store, config.supernet.channels, dataset.classes, dataset.resolution,
                               dataset.channels, on_round_end=write_checkpoint)
        controller = EssController(net, config.ess, loader, recorder, state)
        if checkpoint is not None:
            controller.alpha_optimizer.load_state_arrays(checkpoint.arrays, 'alpha_opt')
            restore_rngs(checkpoint, rngs)

        # Step 4: Search
        archive = controller.run()

        # Step 5: Artifacts
        rows = store.export_entropy_csv(out_dir / 'entropy.csv')
        self._write_archive(archive, out_dir / 'snapshots')
        logger.info(f"Wrote {rows} entropy rows and {len(archive)} snapshots to {out_dir}")
        return out_dir

    def _write_archive(self, archive: List[ArchiveEntry], directory: Path):
        directory.mkdir(parents=True, exist_ok=True)
        for entry in archive:
            (directory / f'{entry.label}.json').write_text(entry.genotype.to_json(), encoding='utf-8')
            save_dot(entry.genotype, directory / f'{entry.label}.dot')

    # ==================== discretize ====================

    def discretize(self, checkpoint_path: Path, epsilon: Optional[float], mode: str, out_dir: Path,
                   snapshot: Optional[str] = None) -> Genotype:
        """
        Turn a checkpoint's architecture into a genotype (JSON + DOT).

        Args:
            checkpoint_path: Search checkpoint
            epsilon: Extra pruning threshold for dynamic mode (default: the run's)
            mode: 'dynamic' (threshold pruning) or 'constrained' (top-2 edges per node)
            out_dir: Destination directory
            snapshot: Archive label to use instead of the latest α
        """
        checkpoint = load_checkpoint(checkpoint_path)
        config = RunConfig.from_text(checkpoint.config_text)
        net = restore_supernet(checkpoint)
        if snapshot is not None:
            entries = {e.label: e for e in restore_state(checkpoint, net).archive}
            if snapshot not in entries:
                raise FxDartsError(f"no snapshot {snapshot!r} in {checkpoint_path} (have {', '.join(entries)})")
            net.arch.load(entries[snapshot].alpha, entries[snapshot].alive)

        if mode == 'dynamic':
            pruned = dynamic_discretize(net, epsilon if epsilon is not None else config.ess.epsilon)
            logger.info(f"Dynamic discretization pruned {len(pruned)} further entries")
            genotype = extract_genotype(net)
        elif mode == 'constrained':
            genotype = constrained_discretize(net)
        else:
            raise FxDartsError(f"unknown discretization mode {mode!r}")
        genotype.validate()

        out_dir.mkdir(parents=True, exist_ok=True)
        stem = f"genotype_{mode}" + (f"_{snapshot}" if snapshot else "")
        (out_dir / f'{stem}.json').write_text(genotype.to_json(), encoding='utf-8')
        save_dot(genotype, out_dir / f'{stem}.dot')
        logger.info(f"Genotype written to {out_dir / (stem + '.json')}")
        return genotype

    # ==================== eval ====================

    def evaluate(self, genotype_path: Path, config: RunConfig, out_dir: Path) -> Dict:
        """Retrain a genotype from scratch and write eval_report.json."""
        try:
            genotype = Genotype.from_json(Path(genotype_path).read_text(encoding='utf-8')).validate()
        except OSError as e:
            raise FxDartsError(f"cannot read genotype {genotype_path}: {e}") from None
        rngs = spawn_generators(config.seed)
        dataset = load_dataset(config.dataset, rngs['data'], rngs['split'], Config.DATA_DIR)
        report = train_discrete(genotype, dataset, config.evaluation, config.supernet.channels, rngs['eval'],
                                augment=config.dataset.augment, augment_rng=rngs['augment'])
        out_dir.mkdir(parents=True, exist_ok=True)
        result = report.to_dict()
        result['structure'] = structure_stats(genotype)
        (out_dir / 'eval_report.json').write_text(json.dumps(result, indent=2) + '\n', encoding='utf-8')
        return result

    # ==================== report ====================

    def report(self, run_dir: Path, max_points: int = Config.REPORT_MAX_POINTS) -> Dict:
        """
        Summarize a run directory: downsampled per-cell entropy series,
        snapshot complexity trend, controller diagnostics and plots.
        """
        csv_path = run_dir / 'entropy.csv'
        db_path = run_dir / Config.DATABASE_NAME
        for required in (csv_path, db_path):
            if not required.exists():
                raise FxDartsError(f"{required} not found; is {run_dir} a completed search run?")

        frame = pd.read_csv(csv_path)
        if frame.empty:
            raise FxDartsError(f"{csv_path} has no rows")
        store = RunStore(db_path)
        out_dir = run_dir / 'report'
        out_dir.mkdir(parents=True, exist_ok=True)

        series = downsample_series(frame, max_points)
        series.to_csv(out_dir / 'entropy_series.csv', index=False, float_format='%.10g', lineterminator='\n')

        rows = store.get_entropy_rows()
        first = {row.cell: row for row in reversed(rows)}
        last = {row.cell: row for row in rows}
        initial = {cell: row.entropy - (0.0 if math.isnan(row.delta_h) else row.delta_h)
                   for cell, row in sorted(first.items())}
        final = {cell: row.entropy for cell, row in sorted(last.items())}
        snapshots = store.get_snapshots()
        arch_rows = [row for row in rows if row.phase == SearchPhase.ARCH_OPT.value]

        summary = {
            'initial_entropy': {str(k): v for k, v in initial.items()},
            'final_entropy': {str(k): v for k, v in final.items()},
            'initial_total_entropy': sum(initial.values()),
            'final_total_entropy': sum(final.values()),
            'final_lambda': {str(k): row.lam for k, row in sorted(last.items())},
            'steps': int(frame['step'].max()),
            'snapshots': [
                {key: s[key] for key in ('label', 'round', 'epoch', 'alive_count', 'edge_count', 'params', 'flops')}
                for s in snapshots
            ],
            'complexity_trend': {
                'labels': [s['label'] for s in snapshots],
                'params': [s['params'] for s in snapshots],
                'flops': [s['flops'] for s in snapshots],
            },
            'pruned_entries': len(store.get_pruning_log()),
            'mean_arch_opt_entropy_reduction': _mean_reduction(arch_rows),
            'theorem_check': _json_safe(theorem_check(arch_rows)),
        }
        (out_dir / 'summary.json').write_text(json.dumps(summary, indent=2) + '\n', encoding='utf-8')

        visualizer = SearchVisualizer(store)
        visualizer.plot_entropy(out_dir / 'entropy.png')
        visualizer.plot_lambda(out_dir / 'lambda.png')
        visualizer.plot_complexity_trend(out_dir / 'complexity.png')
        return summary

    # ==================== display ====================

    def display_archive(self, run_dir: Path):
        store = RunStore(run_dir / Config.DATABASE_NAME)
        print("\n" + "=" * 70)
        print(f"SEARCH RESULT: {run_dir}")
        print("=" * 70)
        for s in store.get_snapshots():
            print(f"  {s['label']:>6}  alive {s['alive_count']:>5}  edges {s['edge_count']:>4}  "
                  f"params {s['params']:>9}  FLOPs {s['flops']:>11}")
        print("=" * 70 + "\n")

    def display_genotype(self, genotype: Genotype, channels: int, classes: int):
        stats = structure_stats(genotype)
        report = complexity_report(genotype, channels, classes)
        print("\n" + "=" * 70)
        print(f"GENOTYPE ({genotype.space}, {genotype.cell_count} cells, N={genotype.node_count})")
        print("-" * 70)
        print(f"  Edges: {stats['edge_count']}   per-node in-degree: {stats['edges_per_node']}")
        print(f"  Operators: {stats['operator_frequency']}   cells unique: {stats['cells_unique']}")
        print(f"  Params: {report.params}   FLOPs at 32×32: {report.flops}")
        print("=" * 70 + "\n")

    def display_eval(self, result: Dict):
        print("\n" + "=" * 70)
        print("EVALUATION REPORT")
        print("-" * 70)
        print(f"  Train accuracy: {result['train_accuracy']:.4f}")
        test = result['test_accuracy']
        print(f"  Test accuracy:  {'n/a' if test is None else f'{test:.4f}'}")
        print(f"  Params: {result['complexity']['params']}   FLOPs: {result['complexity']['flops']}")
        print("=" * 70 + "\n")

    def display_report(self, summary: Dict):
        print("\n" + "=" * 70)
        print("RUN REPORT")
        print("-" * 70)
        print(f"  Total entropy: {summary['initial_total_entropy']:.4f} -> {summary['final_total_entropy']:.4f}")
        trend = summary['complexity_trend']
        for label, params, flops in zip(trend['labels'], trend['params'], trend['flops']):
            print(f"  {label:>6}: {params} params, {flops} FLOPs")
        check = summary['theorem_check']
        print(f"  Entropy fell on {check['decreased']}/{check['qualifying']} qualifying arch-opt steps")
        print("=" * 70 + "\n")


def downsample_series(frame: pd.DataFrame, max_points: int) -> pd.DataFrame:
    """At most max_points evenly spaced rows per cell, always keeping the first and last."""
    parts = []
    for _, rows in frame.groupby('cell', sort=True):
        if len(rows) > max_points:
            picks = np.unique(np.linspace(0, len(rows) - 1, max_points).round().astype(int))
            rows = rows.iloc[picks]
        parts.append(rows)
    return pd.concat(parts, ignore_index=True)


def _mean_reduction(rows) -> Optional[float]:
    values = [-row.delta_h for row in rows if not math.isnan(row.delta_h)]
    return float(np.mean(values)) if values else None


def _json_safe(values: Dict) -> Dict:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in values.items()}


# ==================== CLI ====================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='FX-DARTS: entropy-based super-network shrinking architecture search',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Default desk-scale search (L=4, N=5, O2, synthetic 8x8 data, 2 rounds x 8 epochs)
  python src/main.py search --seed 0 --out runs/demo

  # Larger operator space, custom config file, one override
  python src/main.py search --config my_run.cfg --operator-space O3 --set ess.c1=1.1

  # Resume an interrupted search
  python src/main.py search --resume runs/demo/checkpoints/round_01.npz

  # Classic top-2 discretization of the final architecture
  python src/main.py discretize runs/demo/checkpoints/round_02.npz --mode constrained

  # Retrain a snapshot and summarize the run
  python src/main.py eval runs/demo/snapshots/16E.json --config runs/demo/config.txt --epochs 30
  python src/main.py report runs/demo
        """
    )
    parser.add_argument('--log-level', default=None, help=f'Logging level (default: {Config.LOG_LEVEL})')
    sub = parser.add_subparsers(dest='command', required=True)

    def add_config_flags(p):
        p.add_argument('--config', type=Path, help='Run config file (key=value lines)')
        p.add_argument('--seed', type=int, help='Random seed')
        p.add_argument('--out', type=Path, help='Output directory')
        p.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                       help='Override any config key, e.g. --set supernet.channels=8 (repeatable)')

    p_search = sub.add_parser('search', help='Run the ESS architecture search')
    add_config_flags(p_search)
    p_search.add_argument('--operator-space', choices=['O1', 'O2', 'O3'], help='Operator space preset')
    p_search.add_argument('--epsilon', type=float, help='Pruning threshold ε (default: 0.02)')
    p_search.add_argument('--rounds', type=int, help='Number of rounds R_init')
    p_search.add_argument('--epochs', type=int, help='Epochs per round T_search')
    p_search.add_argument('--resume', type=Path, help='Checkpoint to resume from (its config is used)')

    p_disc = sub.add_parser('discretize', help='Extract a genotype from a checkpoint')
    p_disc.add_argument('checkpoint', type=Path, help='Search checkpoint (.npz)')
    p_disc.add_argument('--epsilon', type=float, help='Pruning threshold for dynamic mode')
    p_disc.add_argument('--mode', choices=['dynamic', 'constrained'], default='dynamic',
                        help='dynamic: threshold pruning (default); constrained: top-2 edges per node')
    p_disc.add_argument('--snapshot', help='Archive label (e.g. 16E) to discretize instead of the final α')
    p_disc.add_argument('--out', type=Path, help='Output directory (default: the checkpoint directory)')

    p_eval = sub.add_parser('eval', help='Retrain a genotype from scratch')
    p_eval.add_argument('genotype', type=Path, help='Genotype JSON file')
    add_config_flags(p_eval)
    p_eval.add_argument('--epochs', type=int, help='Training epochs (default: 30)')

    p_report = sub.add_parser('report', help='Summarize a search run directory')
    p_report.add_argument('run_dir', type=Path, help='Run directory written by search')
    return parser


def resolve_config(args) -> RunConfig:
    """Defaults, then the config file, then command-line flags."""
    config = RunConfig()
    if getattr(args, 'config', None):
        try:
            config = RunConfig.from_text(args.config.read_text(encoding='utf-8'))
        except OSError as e:
            raise FxDartsError(f"cannot read config file {args.config}: {e}") from None
    overrides = {}
    for item in getattr(args, 'set', []):
        key, sep, value = item.partition('=')
        if not sep:
            raise FxDartsError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    overrides.update({
        'seed': getattr(args, 'seed', None),
        'supernet.operator_space': getattr(args, 'operator_space', None),
        'ess.epsilon': getattr(args, 'epsilon', None),
        'ess.r_init': getattr(args, 'rounds', None),
    })
    epochs = getattr(args, 'epochs', None)
    overrides['ess.t_search' if args.command == 'search' else 'evaluation.epochs'] = epochs
    return config.with_overrides(overrides).validate()


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main function - handles command line arguments and runs the app.
    """
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level or Config.LOG_LEVEL)

    try:
        app = FxDartsApp()
        if args.command == 'search':
            config = resolve_config(args)
            out_dir = args.out or (Path(config.output_dir) if config.output_dir else None)
            if args.resume is not None and out_dir is None:
                out_dir = args.resume.resolve().parent.parent
            out_dir = out_dir or Config.OUTPUT_ROOT / f'search-seed{config.seed}'
            run_dir = app.search(config, out_dir, args.resume)
            app.display_archive(run_dir)
        elif args.command == 'discretize':
            genotype = app.discretize(args.checkpoint, args.epsilon, args.mode,
                                      args.out or args.checkpoint.parent, args.snapshot)
            checkpoint = load_checkpoint(args.checkpoint)
            app.display_genotype(genotype, checkpoint.meta('dims', 'channels'), checkpoint.meta('dims', 'classes'))
        elif args.command == 'eval':
            config = resolve_config(args)
            result = app.evaluate(args.genotype, config, args.out or args.genotype.parent)
            app.display_eval(result)
        elif args.command == 'report':
            app.display_report(app.report(args.run_dir))
    except (FxDartsError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1

    logger.info("Done!")
    return 0


if __name__ == "__main__":
    sys.exit(main())
