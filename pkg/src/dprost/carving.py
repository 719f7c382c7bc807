"""Space-carved voxel reference features and FPS reference selection."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import EmptyReferenceSet, EmptyTrainingSet
from .pose import BoundingBox, CameraIntrinsics, Pose, geodesic_distance, project_points


@dataclass(frozen=True, eq=False)
class Observation:
    image: np.ndarray  # (H, W, 3) float in [0, 1]
    mask: np.ndarray  # (H, W) bool
    pose: Pose
    K: CameraIntrinsics
    box: BoundingBox | None = None
    frame_id: int | str | None = None

    @property
    def mask_area(self) -> int:
        return int(np.count_nonzero(self.mask))


@dataclass(frozen=True, eq=False)
class VoxelFeature:
    """Voxel values over [-1, 1]^3, stored as (S, S, S, C) indexed [iz, iy, ix, c]."""

    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = self.values
        if v.ndim != 4 or not (v.shape[0] == v.shape[1] == v.shape[2]):
            raise ValueError(f"feature must be (S, S, S, C), got {v.shape}")

    @property
    def S(self) -> int:
        return self.values.shape[0]

    @property
    def C(self) -> int:
        return self.values.shape[3]

    @property
    def pitch(self) -> float:
        return 2.0 / self.S

    @cached_property
    def occupancy(self) -> np.ndarray:
        return np.any(self.values != 0, axis=-1)

    @cached_property
    def alpha(self) -> np.ndarray:
        """Occupancy as a float (S, S, S, 1) channel."""
        return self.occupancy[..., None].astype(np.float64)

    def occupied_centers(self) -> np.ndarray:
        iz, iy, ix = np.nonzero(self.occupancy)
        c = voxel_axis(self.S)
        return np.stack([c[ix], c[iy], c[iz]], axis=-1)


def voxel_axis(S: int) -> np.ndarray:
    return 2.0 * (np.arange(S) + 0.5) / S - 1.0


def voxel_centers(S: int) -> np.ndarray:
    """(S, S, S, 3) array of (x, y, z) voxel centres indexed [iz, iy, ix]."""
    a = voxel_axis(S)
    z, y, x = np.meshgrid(a, a, a, indexing="ij")
    return np.stack([x, y, z], axis=-1)


def select_references(training_set: list[Observation], n_refs: int = 8) -> list[Observation]:
    """Largest-mask view first, then greedy farthest-point sampling on rotation geodesic distance."""
    if not training_set:
        raise EmptyTrainingSet("training set is empty")
    if not 1 <= n_refs <= len(training_set):
        raise ValueError(f"n_refs must be in [1, {len(training_set)}], got {n_refs}")
    areas = np.array([o.mask_area for o in training_set])
    chosen = [int(np.argmax(areas))]
    min_dist = np.array([geodesic_distance(training_set[chosen[0]].pose.R, o.pose.R) for o in training_set])
    while len(chosen) < n_refs:
        d = min_dist.copy()
        d[chosen] = -np.inf
        nxt = int(np.argmax(d))
        chosen.append(nxt)
        new = np.array([geodesic_distance(training_set[nxt].pose.R, o.pose.R) for o in training_set])
        min_dist = np.minimum(min_dist, new)
    return [training_set[i] for i in chosen]


def project_canvas(T: Pose, K: CameraIntrinsics, S: int) -> tuple[np.ndarray, np.ndarray]:
    """Project every voxel centre through T and K.

    Returns (coords, valid): coords is (S, S, S, 2) pixel (u, v); valid is False
    for voxels at or behind the camera plane (z >= 0).
    """
    cam = T.apply(voxel_centers(S))
    valid = cam[..., 2] < 0
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = project_points(K, cam)
    return uv, valid


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _lookup(obs: Observation, S: int) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbour mask and RGB lookup of one reference; zero outside the image."""
    uv, valid = project_canvas(obs.pose, obs.K, S)
    h, w = obs.mask.shape
    col = round_half_away(np.where(valid, uv[..., 0], -1.0))
    row = round_half_away(np.where(valid, uv[..., 1], -1.0))
    inside = valid & (col >= 0) & (col < w) & (row >= 0) & (row < h)
    ci = np.where(inside, col, 0).astype(np.intp)
    ri = np.where(inside, row, 0).astype(np.intp)
    m = inside & obs.mask.astype(bool)[ri, ci]
    rgb = np.where(inside[..., None], np.asarray(obs.image, dtype=np.float64)[ri, ci], 0.0)
    return m, rgb


def carve(refs: list[Observation], S: int = 128, channels: str = "rgb", threads: int = 1) -> VoxelFeature:
    """Visual hull of the reference masks, coloured by the mean reference RGB.

    mask = prod_k mask_k, rgb = (1/N) sum_k rgb_k, feature = mask * rgb.  With
    ``channels="mask"`` the single-channel carved mask is returned instead.
    References that see a voxel outside their image still count in the 1/N.
    """
    if not refs:
        raise EmptyReferenceSet("no references to carve from")
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda o: _lookup(o, S), refs))
    else:
        parts = [_lookup(o, S) for o in refs]
    # fixed-order reduction keeps the result independent of the thread count
    mask = np.ones((S, S, S), dtype=bool)
    rgb = np.zeros((S, S, S, 3))
    for m, c in parts:
        mask &= m
        rgb += c
    rgb /= len(refs)
    meta = {"references": [o.frame_id for o in refs]}
    if channels == "mask":
        return VoxelFeature(mask[..., None].astype(np.float64), meta)
    return VoxelFeature(np.where(mask[..., None], rgb, 0.0), meta)


def feature_points(feature: VoxelFeature, max_points: int = 4096, seed: int = 0) -> np.ndarray:
    """Occupied voxel centres, uniformly subsampled, for mesh-less evaluation."""
    pts = feature.occupied_centers()
    if len(pts) > max_points:
        idx = np.sort(np.random.default_rng(seed).choice(len(pts), max_points, replace=False))
        pts = pts[idx]
    return pts
