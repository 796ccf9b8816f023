"""Run configuration: simulator, randomization, and trainer settings.

All three groups live in one INI-style file with [sim], [randomization], and
[trainer] sections; every key is optional and falls back to the defaults
below. The DRACER_CONFIG environment variable supplies a config path when the
caller does not pass one explicitly.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import os
from dataclasses import dataclass, field

from dracer.errors import ConfigError

__all__ = [
    "SimConfig",
    "RandomizationConfig",
    "TrainerConfig",
    "AppConfig",
    "load_config",
    "save_config",
    "AUG_NAMES",
]

AUG_NAMES = ("color", "translation", "shadow", "sharpen", "pepper")


@dataclass(frozen=True)
class SimConfig:
    """Simulator and camera settings."""

    vmax: float = 1.0  # m/s
    dt: float = 1.0 / 15.0  # control interval, s
    substeps: int = 10
    wheelbase: float = 0.16  # m
    camera_height: float = 0.12  # m
    camera_pitch_deg: float = -15.0
    camera_hfov_deg: float = 120.0
    image_w: int = 160
    image_h: int = 120
    obs_mode: str = "features"  # "features" or "image"
    max_steps: int = 2000

    def validate(self):
        if self.vmax <= 0:
            raise ConfigError("vmax must be positive")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.substeps < 1:
            raise ConfigError("substeps must be at least 1")
        if self.wheelbase <= 0:
            raise ConfigError("wheelbase must be positive")
        if self.camera_height <= 0:
            raise ConfigError("camera_height must be positive")
        if not 0 < self.camera_hfov_deg < 180:
            raise ConfigError("camera_hfov_deg must be in (0, 180)")
        if self.image_w < 8 or self.image_h < 8:
            raise ConfigError("image dimensions must be at least 8x8")
        if self.obs_mode not in ("features", "image"):
            raise ConfigError(f"obs_mode must be 'features' or 'image', got {self.obs_mode!r}")
        if self.max_steps <= 0:
            raise ConfigError("max_steps must be positive")
        return self


@dataclass(frozen=True)
class RandomizationConfig:
    """Rollout-time domain randomization switches."""

    action_noise_frac: float = 0.1  # fraction of full scale, uniform
    reverse_each_episode: bool = False
    randomize_start: bool = True
    image_augs: tuple = ()  # subset of AUG_NAMES
    aug_probability: float = 0.2
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.action_noise_frac <= 0.5:
            raise ConfigError("action_noise_frac must be in [0, 0.5]")
        if not 0.0 <= self.aug_probability <= 1.0:
            raise ConfigError("aug_probability must be in [0, 1]")
        bad = [a for a in self.image_augs if a not in AUG_NAMES]
        if bad:
            raise ConfigError(f"unknown image augmentations: {bad}")
        return self


@dataclass(frozen=True)
class TrainerConfig:
    """PPO hyperparameters. The regularized profile uses l2_coef=2e-5 and
    dropout_p=0.3; both default off."""

    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    learning_rate: float = 3e-4
    epochs_per_update: int = 4
    minibatch_size: int = 64
    episodes_per_update: int = 20
    entropy_coef: float = 0.1
    l2_coef: float = 0.0
    dropout_p: float = 0.0
    value_coef: float = 0.5

    def validate(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must be in [0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must be in [0, 1]")
        if not 0.0 < self.clip_eps < 1.0:
            raise ConfigError("clip_eps must be in (0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs_per_update < 1 or self.minibatch_size < 1 or self.episodes_per_update < 1:
            raise ConfigError("epochs, minibatch size and episodes per update must be >= 1")
        for name in ("entropy_coef", "l2_coef", "value_coef"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must be in [0, 1)")
        return self


@dataclass(frozen=True)
class AppConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    randomization: RandomizationConfig = field(default_factory=RandomizationConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)


_SECTIONS = {"sim": SimConfig, "randomization": RandomizationConfig, "trainer": TrainerConfig}


def _coerce(name: str, raw: str, target_type):
    raw = raw.strip()
    try:
        if target_type is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if target_type is int:
            return int(raw)
        if target_type is float:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(raw)
            return value
        if target_type is tuple:  # comma-separated list
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {name}={raw!r} as {target_type.__name__}") from None


def load_config(path=None) -> AppConfig:
    """Load an AppConfig from ``path``, the DRACER_CONFIG env var, or defaults.

    Unknown sections or keys are errors: a typo must not silently fall back.
    """
    if path is None:
        path = os.environ.get("DRACER_CONFIG") or None
    if path is None:
        return AppConfig()

    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")

    groups = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        cls = _SECTIONS[section]
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in parser.items(section):
            if key not in fields:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            ftype = type(getattr(cls(), key))
            kwargs[key] = _coerce(f"{section}.{key}", raw, ftype)
        groups[section] = cls(**kwargs).validate()

    return AppConfig(
        sim=groups.get("sim", SimConfig()),
        randomization=groups.get("randomization", RandomizationConfig()),
        trainer=groups.get("trainer", TrainerConfig()),
    )


def save_config(cfg: AppConfig, path) -> None:
    """Write every field of every section, making the run's settings explicit."""
    parser = configparser.ConfigParser()
    for section, obj in (("sim", cfg.sim), ("randomization", cfg.randomization), ("trainer", cfg.trainer)):
        parser[section] = {}
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, tuple):
                value = ",".join(value)
            parser[section][f.name] = str(value)
    with open(path, "w") as fh:
        parser.write(fh)
