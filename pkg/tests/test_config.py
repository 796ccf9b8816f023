"""Config parsing, defaults, validation, and the environment fallback."""

import pytest

from dracer.config import (
    AppConfig,
    RandomizationConfig,
    SimConfig,
    TrainerConfig,
    load_config,
    save_config,
)
from dracer.errors import ConfigError


def test_defaults_without_file():
    cfg = load_config(None)
    assert cfg.sim.vmax == 1.0
    assert cfg.sim.dt == pytest.approx(1.0 / 15.0)
    assert cfg.sim.substeps == 10
    assert cfg.sim.wheelbase == pytest.approx(0.16)
    assert cfg.sim.max_steps == 2000
    assert cfg.sim.obs_mode == "features"
    assert cfg.trainer.gamma == 0.99
    assert cfg.trainer.lam == 0.95
    assert cfg.trainer.clip_eps == 0.2
    assert cfg.trainer.learning_rate == 3e-4
    assert cfg.trainer.epochs_per_update == 4
    assert cfg.trainer.minibatch_size == 64
    assert cfg.trainer.episodes_per_update == 20
    assert cfg.trainer.entropy_coef == 0.1
    assert cfg.trainer.l2_coef == 0.0
    assert cfg.trainer.dropout_p == 0.0
    assert cfg.trainer.value_coef == 0.5
    assert cfg.randomization.action_noise_frac == 0.1
    assert cfg.randomization.aug_probability == 0.2


def test_parse_sections(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(
        "[sim]\nvmax = 2.33\nobs_mode = image\nimage_w = 64\nimage_h = 48\n"
        "[randomization]\nreverse_each_episode = true\nimage_augs = color, pepper\n"
        "[trainer]\nentropy_coef = 0.001\nl2_coef = 2e-5\ndropout_p = 0.3\n"
    )
    cfg = load_config(p)
    assert cfg.sim.vmax == 2.33
    assert cfg.sim.obs_mode == "image"
    assert (cfg.sim.image_w, cfg.sim.image_h) == (64, 48)
    assert cfg.randomization.reverse_each_episode is True
    assert cfg.randomization.image_augs == ("color", "pepper")
    assert cfg.trainer.entropy_coef == 0.001
    assert cfg.trainer.l2_coef == 2e-5
    assert cfg.trainer.dropout_p == 0.3
    # untouched sections keep defaults
    assert cfg.sim.max_steps == 2000
    assert cfg.trainer.gamma == 0.99


def test_env_var_fallback(tmp_path, monkeypatch):
    p = tmp_path / "env.cfg"
    p.write_text("[sim]\nvmax = 1.67\n")
    monkeypatch.setenv("DRACER_CONFIG", str(p))
    assert load_config().sim.vmax == 1.67
    monkeypatch.delenv("DRACER_CONFIG")
    assert load_config().sim.vmax == 1.0


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("[sim]\nvmx = 1\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(p)


def test_unknown_section_rejected(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("[simulator]\nvmax = 1\n")
    with pytest.raises(ConfigError, match="unknown config section"):
        load_config(p)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.cfg")


def test_unparseable_value_rejected(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("[sim]\nvmax = fast\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config(p)


@pytest.mark.parametrize(
    "section,line,message",
    [
        ("sim", "vmax = -1", "vmax"),
        ("sim", "obs_mode = video", "obs_mode"),
        ("sim", "max_steps = 0", "max_steps"),
        ("randomization", "action_noise_frac = 0.6", "action_noise_frac"),
        ("randomization", "aug_probability = 1.5", "aug_probability"),
        ("randomization", "image_augs = blur", "unknown image aug"),
        ("trainer", "gamma = 1.2", "gamma"),
        ("trainer", "clip_eps = 0", "clip_eps"),
        ("trainer", "dropout_p = 1.0", "dropout_p"),
        ("trainer", "entropy_coef = -0.1", "entropy_coef"),
    ],
)
def test_invariants_enforced(tmp_path, section, line, message):
    p = tmp_path / "bad.cfg"
    p.write_text(f"[{section}]\n{line}\n")
    with pytest.raises(ConfigError, match=message):
        load_config(p)


def test_save_load_round_trip(tmp_path):
    cfg = AppConfig(
        sim=SimConfig(vmax=1.67, obs_mode="image", image_w=64, image_h=48),
        randomization=RandomizationConfig(
            action_noise_frac=0.05, reverse_each_episode=True, image_augs=("shadow",), seed=42
        ),
        trainer=TrainerConfig(entropy_coef=0.001, l2_coef=2e-5, dropout_p=0.3),
    )
    path = tmp_path / "round.cfg"
    save_config(cfg, path)
    assert load_config(path) == cfg
