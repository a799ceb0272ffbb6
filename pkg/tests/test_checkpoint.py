"""
Tests for search checkpoints: save, load and restore.
"""

import json

import numpy as np
import pytest

from config.run_config import EssConfig
from src.data_sources.datasets import BatchLoader, synthetic_blobs
from src.database.checkpoint import (
    load_checkpoint,
    restore_rngs,
    restore_state,
    restore_supernet,
    save_checkpoint,
)
from src.errors import CheckpointError
from src.search.ess_controller import EssController
from src.search_space.operators import OperatorSpace
from src.search_space.supernet import init_supernet

CONFIG_TEXT = "seed=5\n"


@pytest.fixture
def finished_controller():
    rng = np.random.default_rng(5)
    images, labels = synthetic_blobs(24, 3, 6, rng)
    loader = BatchLoader(images, labels, 12, np.random.default_rng(6))
    net = init_supernet(3, 4, OperatorSpace.from_id("O2"), channels=2, classes=3, rng=np.random.default_rng(7))
    controller = EssController(net, EssConfig(t_search=2, t_warm=1, r_init=2, batch_size=12), loader)
    controller.run()
    return controller


@pytest.fixture
def saved(tmp_path, finished_controller):
    rngs = {'batches': np.random.default_rng(11), 'supernet': np.random.default_rng(12)}
    rngs['batches'].random(3)
    path = save_checkpoint(tmp_path / 'ckpt' / 'round_02.npz', finished_controller, CONFIG_TEXT, rngs)
    return path, rngs


def test_save_writes_header(saved, finished_controller):
    path, _ = saved
    assert path.exists()
    assert not path.with_name(path.name + '.tmp').exists()
    checkpoint = load_checkpoint(path)
    assert checkpoint.config_text == CONFIG_TEXT
    assert checkpoint.header['space'] == 'O2'
    assert checkpoint.header['dims']['cells'] == 3
    assert checkpoint.header['state']['completed_rounds'] == 2
    assert checkpoint.header['state']['step'] == finished_controller.state.step


def test_restore_supernet_matches_saved_network(saved, finished_controller):
    net = restore_supernet(load_checkpoint(saved[0]))
    original = finished_controller.net
    assert net.arch.digest() == original.arch.digest()
    restored_theta = net.parameter_dict()
    for name, param in original.parameter_dict().items():
        np.testing.assert_array_equal(restored_theta[name].data, param.data)


def test_restore_state_keeps_lambdas_and_archive(saved, finished_controller):
    checkpoint = load_checkpoint(saved[0])
    net = restore_supernet(checkpoint)
    state = restore_state(checkpoint, net)
    original = finished_controller.state

    assert state.lambdas == pytest.approx(original.lambdas)
    assert state.delta_e == pytest.approx(original.delta_e)
    assert state.phase is original.phase
    assert (state.round, state.epoch, state.step) == (original.round, original.epoch, original.step)
    assert [e.label for e in state.archive] == ['2E', '4E']
    for restored, entry in zip(state.archive, original.archive):
        assert restored.genotype == entry.genotype
        assert restored.alive_count == entry.alive_count
        for key, value in entry.alpha.items():
            np.testing.assert_array_equal(restored.alpha[key], value)


def test_alpha_optimizer_state_reloads(saved, finished_controller):
    checkpoint = load_checkpoint(saved[0])
    net = restore_supernet(checkpoint)
    resumed = EssController(net, finished_controller.config, finished_controller.loader,
                            state=restore_state(checkpoint, net))
    resumed.alpha_optimizer.load_state_arrays(checkpoint.arrays, 'alpha_opt')
    before = finished_controller.alpha_optimizer.state
    after = resumed.alpha_optimizer.state
    assert after.step == before.step
    for key, value in before.m.items():
        np.testing.assert_array_equal(after.m[key], value)


def test_restore_rngs_continues_the_streams(saved):
    path, rngs = saved
    expected = rngs['batches'].random(4)
    fresh = {'batches': np.random.default_rng(0), 'other': np.random.default_rng(0)}
    restore_rngs(load_checkpoint(path), fresh)
    np.testing.assert_array_equal(fresh['batches'].random(4), expected)


def test_wrong_format_or_version_is_rejected(tmp_path):
    for header, message in (({'format': 'other', 'version': 1}, 'not an FX-DARTS checkpoint'),
                            ({'format': 'fxdarts-ckpt', 'version': 99}, 'unsupported checkpoint version')):
        path = tmp_path / 'bad.npz'
        np.savez(path, header=np.array(json.dumps(header)))
        with pytest.raises(CheckpointError, match=message):
            load_checkpoint(path)


def test_missing_header_or_file_is_rejected(tmp_path):
    path = tmp_path / 'no_header.npz'
    np.savez(path, x=np.zeros(2))
    with pytest.raises(CheckpointError, match='no header'):
        load_checkpoint(path)
    with pytest.raises(CheckpointError, match='cannot read'):
        load_checkpoint(tmp_path / 'missing.npz')


def test_missing_array_is_reported(saved):
    checkpoint = load_checkpoint(saved[0])
    del checkpoint.arrays['alpha/2/3']
    with pytest.raises(CheckpointError, match='alpha/2/3'):
        restore_supernet(checkpoint)


def test_missing_header_keys_are_reported(saved):
    checkpoint = load_checkpoint(saved[0])
    del checkpoint.header['config']
    with pytest.raises(CheckpointError, match="'config'"):
        checkpoint.config_text

    checkpoint = load_checkpoint(saved[0])
    del checkpoint.header['dims']['classes']
    with pytest.raises(CheckpointError, match="'dims.classes'"):
        restore_supernet(checkpoint)

    checkpoint = load_checkpoint(saved[0])
    del checkpoint.header['dims']
    with pytest.raises(CheckpointError, match="'dims'"):
        restore_supernet(checkpoint)

    checkpoint = load_checkpoint(saved[0])
    net = restore_supernet(checkpoint)
    del checkpoint.header['state']['lambdas']
    with pytest.raises(CheckpointError, match="'state.lambdas'"):
        restore_state(checkpoint, net)
