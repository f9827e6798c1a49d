import pytest

from bridgelab.config import (TrainConfig, dump_config, from_mapping, load_config,
                              parse_mix_mode)
from bridgelab.errors import ConfigurationError


def test_round_trip(tmp_path):
    cfg = TrainConfig(seed=5, mode="dg", mu1=0.5, widths=(8, 8, 16, 16), stage_l=2,
                      lr_drop_epochs=(3,), mix_mode="random_beta:0.5", use_cons=False)
    path = tmp_path / "c.toml"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.mu1, cfg.mu2, cfg.mu3, cfg.mu4, cfg.tau, cfg.margin) == (0.7, 0.1, 1.0, 1.0, 0.5, 0.3)
    assert cfg.identities_per_batch * cfg.instances == cfg.batch_n


@pytest.mark.parametrize("text", [
    "config_version = 2\n",
    "config_version = 1\n[loss]\nmu9 = 1\n",
    "config_version = 1\n[nonsense]\n",
    "config_version = 1\n[loss]\nmu1 = 1.5\n",
    "config_version = 1\n[network]\nstage_m = 4\nstage_l = 2\n",
    "config_version = 1\n[ablation]\nmix_mode = \"beta\"\n",
    "config_version = 1\nmode = \"semi\"\n",
    "config_version = 1\n[loss\n",
])
def test_invalid_configs(tmp_path, text):
    path = tmp_path / "bad.toml"
    path.write_text(text)
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_partial_mapping_keeps_defaults():
    cfg = from_mapping({"config_version": 1, "seed": 4, "schedule": {"epochs": 2}})
    assert cfg.seed == 4 and cfg.epochs == 2 and cfg.lr == TrainConfig().lr


def test_mix_modes():
    assert parse_mix_mode("idm") == ("idm", None)
    assert parse_mix_mode("random-beta:1.0") == ("random_beta", 1.0)
    assert parse_mix_mode("fixed:0.3") == ("fixed", 0.3)
    for bad in ("random_beta", "random_beta:-1", "fixed:2", "mixup"):
        with pytest.raises(ConfigurationError):
            parse_mix_mode(bad)
