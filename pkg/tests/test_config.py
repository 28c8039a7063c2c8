import pytest

from markerbody import config as cfgmod


def test_round_trip_identity(tmp_path):
    for name, cls in cfgmod.COMMAND_CONFIGS.items():
        cfg = cls()
        p = tmp_path / f"{name}.json"
        cfgmod.save_config(p, cfg)
        back = cfgmod.load_config(p, cls)
        assert back == cfg, name
        # second round trip is also the identity
        cfgmod.save_config(p, back)
        assert cfgmod.load_config(p, cls) == cfg


def test_unknown_key_rejected():
    with pytest.raises(cfgmod.ConfigError, match="stepz"):
        cfgmod.config_from_dict(cfgmod.TrainMPConfig, {"stepz": 10})


def test_type_errors():
    with pytest.raises(cfgmod.ConfigError, match="steps"):
        cfgmod.config_from_dict(cfgmod.TrainMPConfig, {"steps": "many"})
    with pytest.raises(cfgmod.ConfigError, match="lr"):
        cfgmod.config_from_dict(cfgmod.TrainMPConfig, {"lr": "fast"})
    with pytest.raises(cfgmod.ConfigError, match="freeze_mp"):
        cfgmod.config_from_dict(cfgmod.TrainThundrConfig, {"freeze_mp": 1})


def test_int_accepted_for_float_field():
    cfg = cfgmod.config_from_dict(cfgmod.TrainMPConfig, {"noise_mm": 5})
    assert cfg.noise_mm == 5.0 and isinstance(cfg.noise_mm, float)


def test_partial_dict_uses_defaults():
    cfg = cfgmod.config_from_dict(cfgmod.TrainThundrConfig, {"steps": 100})
    assert cfg.steps == 100
    assert cfg.lambda_step == 0.1
    assert cfg.n_stages == 4
