import json

import pytest

from m2iosr.config import DATA_DIR_ENV, DEFAULT_POOL_SIZES, RunConfig, config_from_dict, load_config
from m2iosr.errors import ConfigError


def test_defaults():
    cfg = config_from_dict({}, env={})
    assert cfg.train.batch_size == 64 and cfg.train.lr == 0.01
    assert cfg.eval.tau == 0.95
    assert tuple(cfg.eval.pool_sizes) == DEFAULT_POOL_SIZES == (10, 14, 19, 25, 32, 42, 54, 71, 100)
    assert cfg.encoder.input_shape == (1, 32, 32)
    assert cfg.encoder.latent_dim == 32


def test_unknown_keys_listed():
    with pytest.raises(ConfigError, match="train.lerning_rate"):
        config_from_dict({"train": {"lerning_rate": 0.1}}, env={})
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict({"bogus": {}}, env={})


def test_local_weights_validated():
    with pytest.raises(ConfigError, match="sum to 1"):
        config_from_dict({"train": {"a1": 0.5, "a2": 0.1, "a3": 0.1}}, env={})


def test_num_known_consistency():
    with pytest.raises(ConfigError, match="num_known"):
        config_from_dict({"encoder": {"num_known": 5}}, env={})


def test_env_override():
    cfg = config_from_dict({"paths": {"data_dir": "a"}}, env={DATA_DIR_ENV: "/elsewhere"})
    assert cfg.paths.data_dir == "/elsewhere"


def test_round_trip(tmp_path):
    cfg = config_from_dict({"train": {"epochs": 2}, "encoder": {"stage_widths": [4, 4, 4, 4]}}, env={})
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    again = load_config(path)
    assert again.to_dict() == cfg.to_dict()
    assert isinstance(again, RunConfig)


def test_bad_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(bad)


def test_wrong_section_type():
    with pytest.raises(ConfigError):
        config_from_dict({"train": [1, 2]}, env={})


def test_serializable():
    json.loads(config_from_dict({}, env={}).to_json())
