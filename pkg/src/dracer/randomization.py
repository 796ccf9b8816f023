"""Rollout-time domain randomization.

Three independent knobs widen the training distribution: uniform action noise
(a fraction of full actuator scale), episode setup randomization (alternating
direction, random start waypoint), and grayscale image augmentations. All
draws come from an explicit generator owned by the caller, so a fixed seed
reproduces the whole randomization stream bit-exactly.

Image augmentations fire independently with the configured probability, in a
fixed order: color, translation, shadow, sharpen, pepper.
"""

from __future__ import annotations

import numpy as np

from dracer.config import AUG_NAMES, RandomizationConfig
from dracer.sim import EpisodeConfig

__all__ = [
    "perturb_action",
    "randomize_episode",
    "augment_image",
    "apply_color",
    "apply_translation",
    "apply_shadow",
    "apply_sharpen",
    "apply_pepper",
]


def perturb_action(
    steering: float,
    target_speed: float,
    cfg: RandomizationConfig,
    rng: np.random.Generator,
    *,
    max_steer: float,
    v_max: float,
) -> tuple:
    """Add uniform noise of up to ±frac of full scale to both actuators.

    Full scale is the largest steering magnitude for steering and v_max for
    throttle, so the noise floor does not vanish near zero commands. Outputs
    are clamped to the actuator limits.
    """
    f = cfg.action_noise_frac
    if f == 0.0:
        return steering, target_speed
    steering = steering + rng.uniform(-f, f) * max_steer
    target_speed = target_speed + rng.uniform(-f, f) * v_max
    steering = min(max(steering, -max_steer), max_steer)
    target_speed = min(max(target_speed, 0.0), v_max)
    return steering, target_speed


def randomize_episode(
    episode_index: int,
    track,
    cfg: RandomizationConfig,
    rng: np.random.Generator,
    max_steps: int = 2000,
) -> EpisodeConfig:
    """Episode setup: alternating direction and uniformly random start."""
    if cfg.reverse_each_episode:
        direction = "forward" if episode_index % 2 == 0 else "reverse"
    else:
        direction = "forward"
    if cfg.randomize_start:
        start = int(rng.integers(len(track.centerline)))
    else:
        start = 0
    return EpisodeConfig(
        start_waypoint_index=start,
        direction=direction,
        max_steps=max_steps,
        seed=int(rng.integers(np.iinfo(np.int64).max)),
    )


# ---------------------------------------------------------------------------
# Image augmentations. Each helper takes and returns uint8 of the same shape.
# ---------------------------------------------------------------------------


def _to_u8(arr) -> np.ndarray:
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def apply_color(img: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    """Contrast gain about mid-gray 128, then a brightness offset."""
    return _to_u8((img.astype(np.float64) - 128.0) * contrast + 128.0 + brightness)


def apply_translation(img: np.ndarray, shift_cols: int) -> np.ndarray:
    """Horizontal shift; vacated columns replicate the image edge."""
    if shift_cols == 0:
        return img.copy()
    w = img.shape[1]
    out = np.empty_like(img)
    if shift_cols > 0:  # content moves right
        shift_cols = min(shift_cols, w)
        out[:, shift_cols:] = img[:, : w - shift_cols]
        out[:, :shift_cols] = img[:, :1]
    else:
        shift_cols = min(-shift_cols, w)
        out[:, : w - shift_cols] = img[:, shift_cols:]
        out[:, w - shift_cols :] = img[:, -1:]
    return out


def apply_shadow(img: np.ndarray, top_span: tuple, bottom_span: tuple, gain: float) -> np.ndarray:
    """Darken a quadrilateral that spans from the top edge to the bottom edge.

    top_span and bottom_span are (left, right) column coordinates of the quad
    at the first and last row; rows in between interpolate linearly.
    """
    h, w = img.shape
    out = img.copy()
    rows = np.arange(h)
    frac = rows / (h - 1) if h > 1 else np.zeros(h)
    left = top_span[0] + frac * (bottom_span[0] - top_span[0])
    right = top_span[1] + frac * (bottom_span[1] - top_span[1])
    cols = np.arange(w)
    mask = (cols[None, :] >= left[:, None]) & (cols[None, :] <= right[:, None])
    out[mask] = _to_u8(img[mask].astype(np.float64) * gain)
    return out


_SHARPEN_CENTER = 5.0  # 3x3 kernel: center 5, orthogonal neighbors -1


def apply_sharpen(img: np.ndarray) -> np.ndarray:
    """One pass of the unsharp kernel [[0,-1,0],[-1,5,-1],[0,-1,0]], edges replicated."""
    f = img.astype(np.float64)
    p = np.pad(f, 1, mode="edge")
    out = _SHARPEN_CENTER * f - p[:-2, 1:-1] - p[2:, 1:-1] - p[1:-1, :-2] - p[1:-1, 2:]
    return _to_u8(out)


def apply_pepper(img: np.ndarray, rng: np.random.Generator, rate: float = 0.02) -> np.ndarray:
    """Salt-and-pepper: each pixel goes to 0 or to 255, independently, at `rate` each."""
    u = rng.random(img.shape)
    out = img.copy()
    out[u < rate] = 0
    out[(u >= rate) & (u < 2 * rate)] = 255
    return out


def augment_image(img: np.ndarray, cfg: RandomizationConfig, rng: np.random.Generator) -> np.ndarray:
    """Apply the enabled augmentations, each firing with cfg.aug_probability."""
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError("augment_image expects a 2-D uint8 grayscale image")
    enabled = set(cfg.image_augs)
    p = cfg.aug_probability
    out = img
    for name in AUG_NAMES:  # fixed order keeps the draw stream stable
        if name not in enabled or not (rng.random() < p):
            continue
        if name == "color":
            out = apply_color(out, brightness=rng.uniform(-40.0, 40.0),
                              contrast=rng.uniform(0.6, 1.4))
        elif name == "translation":
            shift = int(np.rint(rng.uniform(-0.1, 0.1) * img.shape[1]))
            out = apply_translation(out, shift)
        elif name == "shadow":
            w = img.shape[1]
            top = tuple(sorted(rng.uniform(0.0, w - 1.0, size=2)))
            bottom = tuple(sorted(rng.uniform(0.0, w - 1.0, size=2)))
            out = apply_shadow(out, top, bottom, gain=rng.uniform(0.4, 0.8))
        elif name == "sharpen":
            out = apply_sharpen(out)
        elif name == "pepper":
            out = apply_pepper(out, rng)
    return out if out is not img else img.copy()
