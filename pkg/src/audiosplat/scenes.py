"""Camera pose construction shared by the synthetic generator and tests."""

from __future__ import annotations

import numpy as np

from .rasterizer import Camera


def look_at(position, target, up=(0.0, 1.0, 0.0)):
    """World-to-camera matrix for a camera at ``position`` looking at ``target``.

    Camera frame is +x right, +y down, +z forward.
    """
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    fwd = target - position
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    w2c = np.eye(4)
    w2c[0, :3] = right
    w2c[1, :3] = down
    w2c[2, :3] = fwd
    w2c[:3, 3] = -w2c[:3, :3] @ position
    return w2c


def look_at_camera(width, height, azimuth_deg=0.0, elevation_deg=0.0, distance=2.5, fov_scale=1.8):
    """Camera orbiting the origin; ``fov_scale`` is focal length over width."""
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    pos = distance * np.array(
        [np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)]
    )
    fx = fov_scale * width
    return Camera(
        fx=fx,
        fy=fx,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        world_to_camera=look_at(pos, np.zeros(3)),
        width=width,
        height=height,
    )
