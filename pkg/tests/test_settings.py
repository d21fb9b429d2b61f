import logging

import pytest

from hiersg.commonsense import Strategy
from hiersg.error_handler import ConfigError
from hiersg.llm_client import Backend
from hiersg.metrics import EvalMode, RecallAveraging
from hiersg.settings import (
    RunConfig,
    apply_overrides,
    config_from_dict,
    config_hash,
    load_run_config,
    to_dict,
    with_flags,
)


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(
        "training:\n"
        "  d: 8\n"
        "  steps: 50\n"
        "validation:\n"
        "  strategy: batched_list\n"
        "  window: 5\n"
        "client:\n"
        "  backend: mock\n"
        "  mock_blacklist: [girl on tree]\n"
        "evaluation:\n"
        "  mode: SGDET\n"
        "  k_list: [20, 50]\n"
        "seed: 7\n",
        encoding='utf-8',
    )
    return path


def test_run_config_defaults():
    config = load_run_config()
    assert config.training.d == 16
    assert config.training.in_dim == 8
    assert config.validation.skip_top == 10
    assert config.validation.window == 20
    assert config.validation.votes == 3
    assert config.client.backend == Backend.MOCK
    assert config.evaluation.k_list == (20, 50, 100)
    assert config.evaluation.recall_averaging == RecallAveraging.MICRO
    assert config.distillation.lambda_strong == 10.0
    assert config.seed == 0


def test_load_yaml(config_file):
    config = load_run_config(config_file)
    assert config.training.d == 8
    assert config.training.steps == 50
    assert config.training.lr == 0.01
    assert config.validation.strategy == Strategy.BATCHED_LIST
    assert config.client.mock_blacklist == ('girl on tree',)
    assert config.evaluation.mode == EvalMode.SGDET
    assert config.evaluation.k_list == (20, 50)
    assert config.seed == 7


def test_json_is_valid_yaml(tmp_path):
    path = tmp_path / "run.json"
    path.write_text('{"clustering": {"k": 4}, "jobs": 2}', encoding='utf-8')
    config = load_run_config(path)
    assert config.clustering.k == 4
    assert config.jobs == 2


def test_unknown_keys_are_ignored_with_warning(caplog):
    with caplog.at_level(logging.WARNING, logger='hiersg.settings'):
        config = config_from_dict({'training': {'d': 4, 'colour': 'red'}, 'extras': {}})
    assert config.training.d == 4
    assert "training.colour" in caplog.text
    assert "extras" in caplog.text


@pytest.mark.parametrize("data", [
    {'validation': {'votes': 2}},
    {'evaluation': {'mode': 'bogus'}},
    {'training': {'lr': 0}},
    {'clustering': {'k': 0}},
    {'client': {'timeout': -1}},
    {'jobs': 0},
    {'training': 'not a mapping'},
])
def test_invalid_values(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_bad_yaml(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("training: [unclosed\n", encoding='utf-8')
    with pytest.raises(ConfigError):
        load_run_config(path)


def test_overrides_parse_yaml_values():
    config = apply_overrides(RunConfig(), [
        'training.lr=0.1',
        'training.with_flat=true',
        'evaluation.k_list=[1, 5]',
        'evaluation.wmap_top_k=null',
        'validation.strategy=BATCHED_LIST',
        'seed=3',
    ])
    assert config.training.lr == 0.1
    assert config.training.with_flat is True
    assert config.evaluation.k_list == (1, 5)
    assert config.evaluation.wmap_top_k is None
    assert config.validation.strategy == Strategy.BATCHED_LIST
    assert config.seed == 3


@pytest.mark.parametrize("override", ['training.lr', 'training.nope=1', 'nosection.d=1', 'training=1'])
def test_bad_overrides(override):
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), [override])


def test_no_overrides_is_identity(config_file):
    config = load_run_config(config_file)
    assert apply_overrides(config, []) == config


def test_config_hash_is_stable():
    assert config_hash(RunConfig()) == config_hash(RunConfig())
    assert len(config_hash(RunConfig())) == 64
    assert config_hash(RunConfig()) != config_hash(apply_overrides(RunConfig(), ['seed=1']))


def test_to_dict_uses_enum_values():
    data = to_dict(RunConfig())
    assert data['evaluation']['mode'] == 'predcls'
    assert data['client']['backend'] == 'MOCK'
    assert data['evaluation']['k_list'] == [20, 50, 100]


def test_with_flags():
    config = RunConfig()
    assert with_flags(config) is config
    updated = with_flags(config, seed=5, jobs=2)
    assert (updated.seed, updated.jobs) == (5, 2)
    with pytest.raises(ConfigError):
        with_flags(config, jobs=0)
