"""
Tests for the run configuration text format, overrides and validation.
"""

import pytest

from config.run_config import EssConfig, RunConfig
from src.errors import ConfigError


def test_text_round_trip_preserves_every_field():
    config = RunConfig(seed=11).with_overrides({
        'ess.c1': '1.2',
        'ess.h_min': '0.5',
        'supernet.operator_space': 'O3',
        'dataset.augment': 'true',
        'evaluation.channels': '6',
    })
    again = RunConfig.from_text(config.to_text())
    assert again == config
    assert again.to_text() == config.to_text()


def test_text_format_spells_none_and_booleans():
    text = RunConfig().to_text()
    assert text.startswith('# FX-DARTS run configuration\n')
    assert 'ess.delta_e=none\n' in text
    assert 'dataset.augment=false\n' in text
    assert 'ess.c1=1.05\n' in text


def test_comments_blank_lines_and_aliases():
    text = """
    # tiny run
    seed = 3
    supernet.L=5      # cells
    supernet.N=4
    ess.T_search=6
    ess.R_init=1
    ess.deltaE=0.001
    """
    config = RunConfig.from_text(text)
    assert config.seed == 3
    assert config.supernet.cells == 5
    assert config.supernet.nodes == 4
    assert config.ess.t_search == 6
    assert config.ess.r_init == 1
    assert config.ess.delta_e == pytest.approx(0.001)


def test_from_text_builds_on_base():
    base = RunConfig(seed=9)
    config = RunConfig.from_text('ess.c2=0.9\n', base=base)
    assert config.seed == 9
    assert config.ess.c2 == pytest.approx(0.9)
    assert base.ess.c2 == pytest.approx(0.95)


def test_overrides_ignore_none_and_parse_types():
    config = RunConfig().with_overrides({
        'seed': None,
        'ess.r_init': 3,
        'ess.warmup_updates_alpha': 'no',
        'ess.archopt_updates_theta': 'on',
        'ess.h_min': 'none',
        'dataset.path': 'images',
    })
    assert config.seed == 0
    assert config.ess.r_init == 3
    assert config.ess.warmup_updates_alpha is False
    assert config.ess.archopt_updates_theta is True
    assert config.ess.h_min is None
    assert config.dataset.path == 'images'


@pytest.mark.parametrize('overrides, message', [
    ({'ess.nope': '1'}, 'unknown config key'),
    ({'bogus': '1'}, 'unknown config key'),
    ({'seed.x': '1'}, 'unknown config key'),
    ({'ess': '1'}, 'names a section'),
    ({'ess.c1': 'fast'}, 'as float'),
    ({'ess.r_init': '2.5'}, 'as int'),
    ({'dataset.augment': 'maybe'}, 'as bool'),
])
def test_bad_overrides_raise(overrides, message):
    with pytest.raises(ConfigError, match=message):
        RunConfig().with_overrides(overrides)


def test_line_without_equals_sign_names_the_line():
    with pytest.raises(ConfigError, match='line 2'):
        RunConfig.from_text('seed=1\nsupernet.cells 4\n')


@pytest.mark.parametrize('key, value, message', [
    ('seed', '-1', 'seed'),
    ('ess.c1', '1.0', 'ess.c1'),
    ('ess.c2', '1.0', 'ess.c2'),
    ('ess.lambda_init', '0', 'ess.lambda_init'),
    ('ess.t_warm', '9', 'ess.t_warm'),
    ('ess.r_init', '0', 'ess.r_init'),
    ('ess.epsilon', '0.6', 'ess.epsilon'),
    ('ess.delta_e', '-1', 'ess.delta_e'),
    ('ess.ce_weight', '-0.5', 'ess.ce_weight'),
    ('supernet.cells', '2', 'supernet.cells'),
    ('supernet.nodes', '3', 'supernet.nodes'),
    ('supernet.operator_space', 'O7', 'supernet.operator_space'),
    ('supernet.normalization', 'layer', 'supernet.normalization'),
    ('dataset.name', 'cifar', 'dataset.name'),
    ('dataset.samples', '2', 'dataset.samples'),
    ('dataset.name', 'image-folder', 'dataset.path'),
    ('evaluation.momentum', '1.0', 'evaluation.momentum'),
    ('evaluation.warmup_epochs', '30', 'evaluation.warmup_epochs'),
])
def test_validation_names_offending_key(key, value, message):
    config = RunConfig().with_overrides({key: value})
    with pytest.raises(ConfigError, match=message):
        config.validate()


def test_epsilon_bound_depends_on_operator_space():
    # O2 has two operators, so 0.4 is allowed; O3 has three, so it is not
    config = RunConfig().with_overrides({'ess.epsilon': '0.4'})
    config.validate()
    with pytest.raises(ConfigError, match='ess.epsilon'):
        config.with_overrides({'supernet.operator_space': 'O3'}).validate()


@pytest.mark.parametrize('t_search, t_warm, expected', [
    (16, None, 8),
    (3, None, 1),
    (1, None, 1),
    (10, 4, 4),
])
def test_warm_epochs(t_search, t_warm, expected):
    assert EssConfig(t_search=t_search, t_warm=t_warm).warm_epochs == expected


def test_defaults_validate():
    RunConfig().validate()
    EssConfig().validate(op_count=3)
