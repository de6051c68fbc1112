import pytest

from config import env_overrides, load_config, read_config_file
from core.errors import ConfigError
from schemas.config import RunConfig


def test_defaults_without_sources():
    config = load_config(env={})
    assert (config.seed, config.horizon_steps, config.n_rollouts, config.workers) == (0, 80, 32, 1)


def test_file_then_env_then_overrides(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('seed = 5\nhorizon_steps = 120\n\n[demand]\nw_main = 4.0\nw_side = 2.0\n')
    config = load_config(path, env={})
    assert (config.seed, config.horizon_steps, config.demand.w_main) == (5, 120, 4.0)

    env = {"ROADSIM_SEED": "7", "ROADSIM_DEMAND__W_MAIN": "6.5", "OTHER": "x"}
    config = load_config(path, env=env)
    assert (config.seed, config.demand.w_main, config.demand.w_side) == (7, 6.5, 2.0)

    config = load_config(path, env=env, overrides={"seed": 9, "horizon_steps": None})
    assert (config.seed, config.horizon_steps) == (9, 120)


def test_json_config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text('{"engine": {"lane_changes_enabled": false}, "n_rollouts": 4}')
    config = load_config(path, env={})
    assert config.engine.lane_changes_enabled is False
    assert config.n_rollouts == 4


def test_service_keys_are_not_run_config_fields():
    assert env_overrides({"ROADSIM_CORS_ORIGINS": "http://a", "ROADSIM_WORKERS": "3"}) == {"workers": 3}


def test_unknown_env_field_is_rejected():
    with pytest.raises(ConfigError, match="ROADSIM_SEEDS"):
        load_config(env={"ROADSIM_SEEDS": "1"})
    with pytest.raises(ConfigError):
        load_config(env={"ROADSIM_DEMAND__NOPE": "1"})


def test_invalid_values_are_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="n_rollouts"):
        load_config(env={}, overrides={"n_rollouts": 0})
    with pytest.raises(ConfigError, match="overrides"):
        load_config(env={"ROADSIM_OVERRIDES__D_LANECENTER_2": "0.1"})
    path = tmp_path / "run.toml"
    path.write_text("seed = [")
    with pytest.raises(ConfigError, match="invalid config file"):
        read_config_file(path)
    yaml = tmp_path / "run.yaml"
    yaml.write_text("seed: 1\n")
    with pytest.raises(ConfigError, match=".json or .toml"):
        read_config_file(yaml)
    with pytest.raises(ConfigError, match="cannot read"):
        read_config_file(tmp_path / "missing.toml")


def test_horizon_inside_the_history_is_a_config_error():
    with pytest.raises(ConfigError, match="history_length"):
        RunConfig(horizon_steps=5).check_scenario(11)
    RunConfig(horizon_steps=80).check_scenario(11)
