"""Cone-beam RoI grid: forming, cropping, pushing and transformation to object space.

Grids are stored as arrays of shape (H, W, N_z, 3) indexed [row m, column l, n].
Sample n on a ray sits at the signed offset s_n = 2n/N_z - 1 along the unit
ray direction, so after pushing the samples run near-to-far from the camera.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DistanceTooSmall, StageMismatch
from .pose import BoundingBox, CameraIntrinsics, Pose

STAGES = ("formed", "cropped", "pushed", "object")


@dataclass(frozen=True, eq=False)
class RayGrid:
    points: np.ndarray
    stage: str
    # unit ray directions (H, W, 3) in camera space; needed to push the s = 0 sample
    directions: np.ndarray | None = None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown grid stage {self.stage!r}")
        if self.points.ndim != 4 or self.points.shape[-1] != 3:
            raise ValueError(f"grid points must be (H, W, N_z, 3), got {self.points.shape}")

    @property
    def n_z(self) -> int:
        return self.points.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.points.shape[:2]

    def require(self, stage: str) -> RayGrid:
        if self.stage != stage:
            raise StageMismatch(f"expected a {stage!r} grid, got {self.stage!r}")
        return self


def ray_offsets(n_z: int) -> np.ndarray:
    return 2.0 * np.arange(n_z) / n_z - 1.0


def ray_directions(K: CameraIntrinsics, l: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Unit directions of the rays through continuous pixel coordinates (l, m)."""
    l, m = np.broadcast_arrays(np.asarray(l, dtype=np.float64), np.asarray(m, dtype=np.float64))
    # (l - px, m - py, -f) scaled per axis so non-square pixels stay consistent with projection
    img = np.stack([(l - K.px) / K.fx, (m - K.py) / K.fy, np.full(l.shape, -1.0)], axis=-1)
    return img / np.linalg.norm(img, axis=-1, keepdims=True)


def _grid_on_rays(dirs: np.ndarray, n_z: int, stage: str) -> RayGrid:
    s = ray_offsets(n_z)
    points = dirs[:, :, None, :] * s[None, None, :, None]
    return RayGrid(points, stage, dirs)


def form_grid(K: CameraIntrinsics, width: int, height: int, n_z: int = 64) -> RayGrid:
    """Grid inside the unit ball on the rays through every pixel of a width x height image."""
    if n_z < 2:
        raise ValueError("n_z must be at least 2")
    if width < 1 or height < 1:
        raise ValueError("image size must be positive")
    m, l = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    return _grid_on_rays(ray_directions(K, l, m), n_z, "formed")


def roi_sample_coords(B: BoundingBox, out_h: int, out_w: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates of the RoI-align bin centres, as (l, m) arrays of shape (out_h, out_w)."""
    out_w = out_h if out_w is None else out_w
    ls = B.x + (np.arange(out_w) + 0.5) * B.w / out_w
    ms = B.y + (np.arange(out_h) + 0.5) * B.h / out_h
    m, l = np.meshgrid(ms, ls, indexing="ij")
    return l, m


def crop_grid(K: CameraIntrinsics, B: BoundingBox, out_res: int = 128, n_z: int = 64) -> RayGrid:
    """Rays through the box, evaluated analytically at the RoI-align sample positions.

    The box is used as given; callers square it first with ``zoom_box``.
    """
    if out_res < 2:
        raise ValueError("out_res must be at least 2")
    if n_z < 2:
        raise ValueError("n_z must be at least 2")
    l, m = roi_sample_coords(B, out_res)
    return _grid_on_rays(ray_directions(K, l, m), n_z, "cropped")


def zoom_box(B: BoundingBox, scale: float = 1.0) -> BoundingBox:
    return B.squared(scale)


def push_grid(cropped: RayGrid, distance: float) -> RayGrid:
    """Slide every sample outward along its ray by ``distance``.

    g' = g - distance * g/|g| * sign(g_z); the g = 0 sample goes to distance * u.
    """
    if cropped.stage not in ("formed", "cropped"):
        raise StageMismatch(f"cannot push a {cropped.stage!r} grid")
    if not distance > 1.0:
        raise DistanceTooSmall(f"object distance {distance:.4g} must exceed 1 (unit ball in front of camera)")
    g = cropped.points
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    zero = norm[..., 0] == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        pushed = g - distance * (g / norm) * np.sign(g[..., 2:3])
    if np.any(zero):
        if cropped.directions is None:
            raise ValueError("grid has a zero sample but no ray directions")
        dirs = np.broadcast_to(cropped.directions[:, :, None, :], g.shape)
        pushed[zero] = distance * dirs[zero]
    return RayGrid(pushed, "pushed", cropped.directions)


def transform_grid(pushed: RayGrid, T: Pose) -> RayGrid:
    """Map camera-space samples into object space: g -> R^T (g - t)."""
    pushed.require("pushed")
    return RayGrid((pushed.points - T.t) @ T.R, "object", pushed.directions)


def object_grid(K: CameraIntrinsics, B: BoundingBox, T: Pose, out_res: int = 128, n_z: int = 64, zoom: bool = True) -> RayGrid:
    """Full generator: form/crop (analytic), push by |t|, transform by T^-1."""
    box = zoom_box(B) if zoom else B
    cropped = crop_grid(K, box, out_res, n_z)
    return transform_grid(push_grid(cropped, float(np.linalg.norm(T.t))), T)


def pushed_points(directions: np.ndarray, n_z: int, distance: float) -> np.ndarray:
    """Closed form of push_grid on an analytic grid: (distance + s_n) * u."""
    s = ray_offsets(n_z)
    return (distance + s)[None, None, :, None] * directions[:, :, None, :]
