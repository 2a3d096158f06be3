import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from stable_lnn import config
from stable_lnn.errors import ConfigError


def test_defaults_and_presets_resolve():
    base = config.resolve()
    assert base == config.DEFAULTS
    for name in config.PRESETS:
        cfg = config.resolve(preset=name)
        assert set(cfg) <= set(config.DEFAULTS) | {"preset"}
        assert cfg["preset"] == name


def test_overrides_and_validation():
    cfg = config.resolve({"preset": "reg_eigen_l100", "seed": 4})
    assert cfg["reg_mode"] == "eigen" and cfg["reg_lambda"] == 100.0 and cfg["seed"] == 4
    with pytest.raises(ConfigError):
        config.resolve({"learning_rate": 1})
    with pytest.raises(ConfigError):
        config.resolve(preset="nope")
    with pytest.raises(ConfigError):
        config.resolve({"version": 2})


def test_parse_format():
    text = """
# comment
version = 1
preset = act_softplus   # trailing comment
seed = 7
dyt = true
rollout_t_end = none
phases = [{"epochs": 3, "lr": 0.001, "eta_min": 0.0}]
name = my run
"""
    d = config.parse(text)
    assert d["preset"] == "act_softplus" and d["seed"] == 7 and d["dyt"] is True
    assert d["rollout_t_end"] is None and d["phases"][0]["epochs"] == 3 and d["name"] == "my run"
    cfg = config.resolve(d)
    assert cfg["activation"] == "softplus"
    with pytest.raises(ConfigError):
        config.parse("seed 3")
    with pytest.raises(ConfigError):
        config.parse("seed = 3\nseed = 4")


def test_full_size_preset_values():
    cfg = config.resolve(preset="full_double_pendulum")
    assert cfg["layers"] == 4 and cfg["hidden_dim"] == 500 and cfg["epochs"] == 300
    assert cfg["train_q_high"] == [3 * math.pi] * 2


@pytest.mark.parametrize("preset", sorted(config.PRESETS))
def test_dump_load_round_trip(tmp_path, preset):
    cfg = config.resolve(preset=preset)
    p = tmp_path / "c.cfg"
    p.write_text(config.dump(cfg))
    back = config.load(p)
    cfg.pop("preset")
    assert back == cfg


@given(st.integers(0, 2 ** 31), st.floats(1e-8, 1.0), st.sampled_from(["none", "eigen", "sylvester"]))
def test_dump_round_trip_values(seed, lr, mode):
    cfg = config.resolve({"seed": seed, "lr": lr, "reg_mode": mode})
    assert config.resolve(config.parse(config.dump(cfg))) == cfg
