"""First-person grayscale rendering of the track from the car's camera.

Each pixel's view ray is intersected with the ground plane; the hit point is
classified against the centerline: on the surface (mid gray 128), on a
boundary line at the track edge (white 255), or off the track (dark 30).
Pixels at or above the horizon stay background. Rendering is a pure function
of the car state, so identical states produce bit-identical images.

The per-pixel classification is the hot kernel; it has a scalar-loop build
(numba-compiled when enabled) and a vectorized numpy build that perform the
same arithmetic and therefore label every pixel identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dracer._accel import USE_NUMBA, njit

__all__ = ["CameraConfig", "render_labels", "render_observation", "LINE_HALF_WIDTH", "GRAY_LEVELS"]

LINE_HALF_WIDTH = 0.025  # m, half thickness of the painted boundary lines
GRAY_LEVELS = np.array([30, 128, 255, 255], dtype=np.uint8)  # bg, surface, inner line, outer line
_HORIZON_EPS = -1e-12


@dataclass(frozen=True)
class CameraConfig:
    height: float = 0.12  # m above ground
    pitch: float = math.radians(-15.0)  # negative looks down
    hfov: float = math.radians(120.0)

    @staticmethod
    def from_sim_config(cfg) -> "CameraConfig":
        return CameraConfig(
            height=cfg.camera_height,
            pitch=math.radians(cfg.camera_pitch_deg),
            hfov=math.radians(cfg.camera_hfov_deg),
        )


def _camera_basis(heading: float, pitch: float):
    """World-frame forward, right, and up unit vectors of the camera."""
    ch, sh = math.cos(heading), math.sin(heading)
    cp, sp = math.cos(pitch), math.sin(pitch)
    fwd = (ch * cp, sh * cp, sp)
    right = (sh, -ch, 0.0)
    up = (-ch * sp, -sh * sp, cp)
    return fwd, right, up


def _render_loop(
    cam_x, cam_y, cam_h,
    fwd_x, fwd_y, fwd_z, right_x, right_y, up_x, up_y, up_z,
    fx, fy, cx, cy, width, height,
    ax, ay, dxs, dys, len2, widths, line_hw,
):
    labels = np.zeros((height, width), dtype=np.uint8)
    n = ax.shape[0]
    for v in range(height):
        dyp = (v - cy) / fy
        for u in range(width):
            dxp = (u - cx) / fx
            rx = fwd_x + dxp * right_x - dyp * up_x
            ry = fwd_y + dxp * right_y - dyp * up_y
            rz = fwd_z - dyp * up_z
            if rz >= _HORIZON_EPS:
                continue
            t = -cam_h / rz
            px = cam_x + t * rx
            py = cam_y + t * ry
            best = 1e300
            bi = 0
            bt = 0.0
            for i in range(n):
                tt = ((px - ax[i]) * dxs[i] + (py - ay[i]) * dys[i]) / len2[i]
                if tt < 0.0:
                    tt = 0.0
                elif tt > 1.0:
                    tt = 1.0
                qx = ax[i] + tt * dxs[i]
                qy = ay[i] + tt * dys[i]
                d2 = (px - qx) ** 2 + (py - qy) ** 2
                if d2 < best:
                    best = d2
                    bi = i
                    bt = tt
            dev = math.sqrt(best)
            j = bi + 1
            if j == n:
                j = 0
            half = 0.5 * (widths[bi] * (1.0 - bt) + widths[j] * bt)
            if abs(dev - half) <= line_hw:
                cross = dxs[bi] * (py - ay[bi]) - dys[bi] * (px - ax[bi])
                labels[v, u] = 2 if cross > 0.0 else 3
            elif dev < half:
                labels[v, u] = 1
    return labels


def _render_numpy(
    cam_x, cam_y, cam_h,
    fwd_x, fwd_y, fwd_z, right_x, right_y, up_x, up_y, up_z,
    fx, fy, cx, cy, width, height,
    ax, ay, dxs, dys, len2, widths, line_hw,
):
    vv, uu = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    dyp = (vv - cy) / fy
    dxp = (uu - cx) / fx
    rx = fwd_x + dxp * right_x - dyp * up_x
    ry = fwd_y + dxp * right_y - dyp * up_y
    rz = fwd_z - dyp * up_z

    labels = np.zeros((height, width), dtype=np.uint8)
    ground = rz < _HORIZON_EPS
    if not np.any(ground):
        return labels
    t = -cam_h / rz[ground]
    px = cam_x + t * rx[ground]
    py = cam_y + t * ry[ground]

    tt = ((px[:, None] - ax) * dxs + (py[:, None] - ay) * dys) / len2
    tt = np.clip(tt, 0.0, 1.0)
    qx = ax + tt * dxs
    qy = ay + tt * dys
    d2 = (px[:, None] - qx) ** 2 + (py[:, None] - qy) ** 2
    bi = np.argmin(d2, axis=1)
    rows = np.arange(len(bi))
    dev = np.sqrt(d2[rows, bi])
    bt = tt[rows, bi]
    half = 0.5 * (widths[bi] * (1.0 - bt) + widths[(bi + 1) % len(ax)] * bt)
    cross = dxs[bi] * (py - ay[bi]) - dys[bi] * (px - ax[bi])

    flat = np.zeros(len(bi), dtype=np.uint8)
    on_line = np.abs(dev - half) <= line_hw
    flat[on_line] = np.where(cross[on_line] > 0.0, 2, 3)
    flat[~on_line & (dev < half)] = 1
    labels[ground] = flat
    return labels


if USE_NUMBA:
    _render_kernel = njit(_render_loop)
else:
    _render_kernel = _render_numpy


def render_labels(state, track, camera: CameraConfig, width: int, height: int) -> np.ndarray:
    """Per-pixel class labels: 0 background, 1 surface, 2 inner line, 3 outer line."""
    cl = track.centerline
    fwd, right, up = _camera_basis(state.heading, camera.pitch)
    fx = (width / 2.0) / math.tan(camera.hfov / 2.0)
    fy = fx  # square pixels
    cx = (width - 1) / 2.0  # centered so mirrored pixels get exactly opposite rays
    cy = (height - 1) / 2.0
    return _render_kernel(
        state.x, state.y, camera.height,
        fwd[0], fwd[1], fwd[2], right[0], right[1], up[0], up[1], up[2],
        fx, fy, cx, cy, width, height,
        cl._seg_ax, cl._seg_ay, cl._seg_dx, cl._seg_dy, cl._seg_len2,
        cl.widths, LINE_HALF_WIDTH,
    )


def render_observation(state, track, camera: CameraConfig, width: int, height: int):
    from dracer.sim import Observation  # local import to avoid a module cycle

    labels = render_labels(state, track, camera, width, height)
    return Observation(mode="image", image=GRAY_LEVELS[labels])
