"""Deterministic episodic racing simulator.

A kinematic bicycle model drives a car around a closed centerline track. Each
control step covers 1/15 s, integrated with forward-Euler substeps. Episodes
end on lap completion, driving off track, or a step limit. The same track,
episode config, and action sequence always reproduce bit-identical results.

Observations come in two modes: an 8-value feature vector (fast, used for
desk-scale training) or a rendered grayscale camera image (see render.py).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from dracer.config import SimConfig
from dracer.errors import SimulationError
from dracer.geometry import (
    CenterLine,
    ProgressTracker,
    TrackMesh,
    TrackPose,
    _project_raw,
    centerline_from_mesh,
    is_off_track,
    width_at_pose,
)

__all__ = [
    "CarState",
    "ActionSpace",
    "Observation",
    "StepResult",
    "EpisodeConfig",
    "Track",
    "Simulator",
    "default_action_space",
    "map_action",
    "default_reward",
    "integrate_motion",
    "extract_features",
    "write_trace_csv",
]

SPEED_LAG_TAU = 0.3  # s, first-order response of the drivetrain
FEATURE_COUNT = 8
CURVATURE_LOOKAHEADS = (0.2, 0.5, 1.0, 2.0, 4.0)  # m ahead along travel


@dataclass(frozen=True)
class CarState:
    """Planar car pose. heading is normalized to (-pi, pi]."""

    x: float
    y: float
    heading: float
    speed: float
    steering_angle: float


@dataclass(frozen=True)
class ActionSpace:
    """Discrete action grid: every steering level crossed with every throttle
    level. index = steering_idx * len(throttle_levels) + throttle_idx."""

    steering_levels: tuple  # radians, strictly increasing
    throttle_levels: tuple  # m/s, strictly increasing, positive

    def __post_init__(self):
        if list(self.steering_levels) != sorted(set(self.steering_levels)):
            raise SimulationError("steering levels must be strictly increasing")
        if list(self.throttle_levels) != sorted(set(self.throttle_levels)):
            raise SimulationError("throttle levels must be strictly increasing")
        if any(v <= 0 for v in self.throttle_levels):
            raise SimulationError("throttle levels must be positive")

    @property
    def count(self) -> int:
        return len(self.steering_levels) * len(self.throttle_levels)

    @property
    def max_steering(self) -> float:
        return max(abs(s) for s in self.steering_levels)


def default_action_space(vmax: float) -> ActionSpace:
    """5 symmetric steering levels x 2 throttle levels = 10 actions."""
    degs = (-30.0, -15.0, 0.0, 15.0, 30.0)
    return ActionSpace(
        steering_levels=tuple(math.radians(d) for d in degs),
        throttle_levels=(0.5 * vmax, vmax),
    )


def map_action(index: int, space: ActionSpace) -> tuple:
    """Action index -> (steering rad, target speed m/s)."""
    if not 0 <= index < space.count:
        raise SimulationError(f"action index {index} out of range [0, {space.count})")
    n_throttle = len(space.throttle_levels)
    return (
        space.steering_levels[index // n_throttle],
        space.throttle_levels[index % n_throttle],
    )


@dataclass(frozen=True)
class Observation:
    mode: str  # "features" or "image"
    features: np.ndarray = None  # (8,) float32
    image: np.ndarray = None  # (H, W) uint8, top row first


@dataclass(frozen=True)
class EpisodeConfig:
    start_waypoint_index: int = 0
    direction: str = "forward"
    max_steps: int = 2000
    seed: int = 0  # reserved for stochastic observation models; dynamics are deterministic

    def __post_init__(self):
        if self.direction not in ("forward", "reverse"):
            raise SimulationError(f"direction must be forward or reverse, got {self.direction!r}")
        if self.max_steps <= 0:
            raise SimulationError("max_steps must be positive")


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    reward: float
    done: bool
    info: dict  # progress, off_track, lap_complete, pose, sim_time


@dataclass(frozen=True)
class Track:
    """Mesh plus the centerline derived from it."""

    mesh: TrackMesh
    centerline: CenterLine

    @staticmethod
    def from_mesh(mesh: TrackMesh) -> "Track":
        return Track(mesh=mesh, centerline=centerline_from_mesh(mesh))


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------


def _wrap_heading(a: float) -> float:
    return math.pi - (math.pi - a) % (2.0 * math.pi)


def integrate_motion(
    state: CarState, steering: float, target_speed: float, cfg: SimConfig
) -> CarState:
    """One control interval of the kinematic bicycle, forward Euler.

    x' = v cos(heading), y' = v sin(heading), heading' = (v / wheelbase) * tan(steering);
    speed relaxes toward target_speed with time constant SPEED_LAG_TAU.
    Steering is applied instantly (no actuator lag modeled).
    """
    h = cfg.dt / cfg.substeps
    x, y, th, v = state.x, state.y, state.heading, state.speed
    tan_phi = math.tan(steering)
    for _ in range(cfg.substeps):
        dx = v * math.cos(th)
        dy = v * math.sin(th)
        dth = (v / cfg.wheelbase) * tan_phi
        dv = (target_speed - v) / SPEED_LAG_TAU
        x += h * dx
        y += h * dy
        th += h * dth
        v += h * dv
    v = min(max(v, 0.0), cfg.vmax)
    return CarState(x=x, y=y, heading=_wrap_heading(th), speed=v, steering_angle=steering)


# ---------------------------------------------------------------------------
# Reward
# ---------------------------------------------------------------------------


def default_reward(pose: TrackPose, cl: CenterLine) -> float:
    """Banded centerline incentive: tighter to the middle pays more.

    With d the lateral deviation and w the local width: 1.0 inside 0.1*w,
    0.5 inside 0.25*w, 0.1 inside 0.5*w (still on track), else 0.001.
    """
    d = pose.lateral_deviation
    w = width_at_pose(pose, cl)
    if d <= 0.10 * w:
        return 1.0
    if d <= 0.25 * w:
        return 0.5
    if d <= 0.50 * w:
        return 0.1
    return 0.001


# ---------------------------------------------------------------------------
# Feature observations
# ---------------------------------------------------------------------------


def extract_features(
    state: CarState, track: Track, direction: str = "forward", vmax: float = 1.0
) -> Observation:
    """8-vector: signed centered-ness, heading error, speed, and the road ahead.

    [0] lateral deviation / half width, signed toward the travel direction's left
    [1] heading error vs the travel tangent, radians in (-pi, pi]
    [2] speed / vmax
    [3..7] signed curvature (1/m) sampled 0.2, 0.5, 1, 2, 4 m ahead; in reverse
           the samples look backward along the spline and flip sign, so the
           policy always sees curvature in its own travel frame.
    """
    cl = track.centerline
    i, t, dev, side = _project_raw((state.x, state.y), cl)
    s = cl.cumulative_arclength[i] + t * cl._seg_len[i]
    pose = TrackPose(
        nearest_segment_index=i,
        lateral_deviation=dev,
        arclength_s=s % cl.lap_length,
        heading_of_segment=float(cl._seg_heading[i]),
    )
    half_w = 0.5 * width_at_pose(pose, cl)

    sign = 1.0 if direction == "forward" else -1.0
    travel_heading = pose.heading_of_segment if direction == "forward" else _wrap_heading(
        pose.heading_of_segment + math.pi
    )
    feats = np.empty(FEATURE_COUNT, dtype=np.float64)
    feats[0] = sign * side * dev / half_w
    feats[1] = _wrap_heading(state.heading - travel_heading)
    feats[2] = state.speed / vmax
    for k, ahead in enumerate(CURVATURE_LOOKAHEADS):
        feats[3 + k] = sign * cl.curvature_at_arclength(pose.arclength_s + sign * ahead)
    return Observation(mode="features", features=feats.astype(np.float32))


# ---------------------------------------------------------------------------
# Episode lifecycle
# ---------------------------------------------------------------------------


class Simulator:
    """Single car on a closed track; strictly synchronous step contract.

    Instances are single-threaded; run one per worker. The reward function is
    pluggable: any callable of (pose, centerline) -> float.
    """

    def __init__(self, track: Track, cfg: SimConfig, action_space: ActionSpace = None, reward_fn=None):
        cfg.validate()
        self.track = track
        self.cfg = cfg
        self.action_space = action_space or default_action_space(cfg.vmax)
        self.reward_fn = reward_fn or default_reward
        self._camera = None
        if cfg.obs_mode == "image":
            from dracer.render import CameraConfig  # deferred: feature mode needs no renderer

            self._camera = CameraConfig.from_sim_config(cfg)
        self._state = None
        self._tracker = None
        self._episode = None
        self._done = True
        self._steps = 0

    @property
    def state(self) -> CarState:
        return self._state

    @property
    def done(self) -> bool:
        return self._done

    @property
    def steps(self) -> int:
        return self._steps

    def reset(self, ep: EpisodeConfig) -> Observation:
        cl = self.track.centerline
        if not 0 <= ep.start_waypoint_index < len(cl):
            raise SimulationError(
                f"start waypoint {ep.start_waypoint_index} out of range [0, {len(cl)})"
            )
        wp = cl.waypoints[ep.start_waypoint_index]
        heading = float(cl._seg_heading[ep.start_waypoint_index])
        if ep.direction == "reverse":
            heading = _wrap_heading(heading + math.pi)
        self._state = CarState(
            x=float(wp[0]), y=float(wp[1]), heading=heading, speed=0.0, steering_angle=0.0
        )
        s0 = float(cl.cumulative_arclength[ep.start_waypoint_index])
        self._tracker = ProgressTracker(s_start=s0, direction=ep.direction, lap_length=cl.lap_length)
        self._episode = ep
        self._done = False
        self._steps = 0
        return self._observe()

    def step(self, action_index: int) -> StepResult:
        if self._done or self._episode is None:
            raise SimulationError("step() called on a finished episode; call reset() first")
        steering, target_speed = map_action(action_index, self.action_space)
        return self.step_controls(steering, target_speed)

    def step_controls(self, steering: float, target_speed: float) -> StepResult:
        """Step with explicit actuator values (used for perturbed execution)."""
        if self._done or self._episode is None:
            raise SimulationError("step() called on a finished episode; call reset() first")
        max_steer = self.action_space.max_steering
        steering = min(max(steering, -max_steer), max_steer)
        target_speed = min(max(target_speed, 0.0), self.cfg.vmax)

        self._state = integrate_motion(self._state, steering, target_speed, self.cfg)
        self._steps += 1

        cl = self.track.centerline
        pose = _pose_of(self._state, cl)
        progress = self._tracker.update(pose.arclength_s)
        off = is_off_track(pose, cl)
        lap_complete = progress >= 1.0
        hit_limit = self._steps >= self._episode.max_steps
        self._done = off or lap_complete or hit_limit

        reward = float(self.reward_fn(pose, cl))
        info = {
            "progress": progress,
            "off_track": off,
            "lap_complete": lap_complete,
            "pose": pose,
            "sim_time": self._steps * self.cfg.dt,
        }
        return StepResult(observation=self._observe(), reward=reward, done=self._done, info=info)

    def _observe(self) -> Observation:
        if self.cfg.obs_mode == "image":
            from dracer.render import render_observation

            return render_observation(
                self._state, self.track, self._camera, self.cfg.image_w, self.cfg.image_h
            )
        return extract_features(
            self._state, self.track, direction=self._episode.direction, vmax=self.cfg.vmax
        )


def _pose_of(state: CarState, cl: CenterLine) -> TrackPose:
    i, t, dev, _ = _project_raw((state.x, state.y), cl)
    s = cl.cumulative_arclength[i] + t * cl._seg_len[i]
    if s >= cl.lap_length:
        s -= cl.lap_length
    return TrackPose(
        nearest_segment_index=i,
        lateral_deviation=dev,
        arclength_s=s,
        heading_of_segment=float(cl._seg_heading[i]),
    )


# ---------------------------------------------------------------------------
# Trace export
# ---------------------------------------------------------------------------


def write_trace_csv(rows: list, path) -> None:
    """rows: (step, CarState, action used, reward, progress, done) tuples."""
    with open(path, "w", newline="\n") as fh:
        fh.write("step,x,y,heading,speed,action,reward,progress,done\n")
        for step, st, action, reward, progress, done in rows:
            fh.write(
                f"{step},{st.x!r},{st.y!r},{st.heading!r},{st.speed!r},"
                f"{action},{float(reward)!r},{float(progress)!r},{int(done)}\n"
            )
