"""
Shared fixtures for the test suite.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Make `src` and `config` importable when pytest runs from anywhere
PROJECT_ROOT = Path(__file__).resolve().parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from config.run_config import DatasetConfig, EssConfig, EvalConfig, RunConfig, SupernetConfig  # noqa: E402
from src.search_space.operators import OperatorSpace  # noqa: E402
from src.search_space.supernet import init_supernet  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_supernet(rng):
    """L=3, N=4, O3 super-network on 2-channel stems."""
    return init_supernet(3, 4, OperatorSpace.from_id("O3"), channels=2, classes=3, in_channels=3, rng=rng)


@pytest.fixture
def tiny_run_config(tmp_path):
    """A search that finishes in seconds: 3 cells, 2 rounds of 2 epochs on 6×6 blobs."""
    return RunConfig(
        seed=7,
        output_dir=str(tmp_path / "run"),
        ess=EssConfig(t_search=2, t_warm=1, r_init=2, batch_size=20),
        supernet=SupernetConfig(cells=3, nodes=4, channels=2, operator_space="O2"),
        dataset=DatasetConfig(name="synthetic-blobs", resolution=6, classes=3, samples=60, train_fraction=0.75),
        evaluation=EvalConfig(epochs=2, batch_size=20, lr=0.05),
    )
