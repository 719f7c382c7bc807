"""Analytic ray-traced synthetic scenes.

The tracer intersects camera rays with exact shapes (sphere, cube, box), so
it shares no code with the voxel projector and serves as an independent
oracle for round-trip tests.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import Frame, SceneManifest, save_manifest, write_image, write_mask
from .grid import ray_directions
from .pose import BoundingBox, CameraIntrinsics, Pose, random_rotation

KINDS = ("sphere", "cube", "box", "two-tone sphere")
TEXTURES = ("uniform", "gradient", "octant")


@dataclass(frozen=True)
class SyntheticShape:
    kind: str = "sphere"
    texture: str = "uniform"  # "uniform", "gradient" or "octant"
    color: tuple[float, float, float] = (0.8, 0.3, 0.2)
    color2: tuple[float, float, float] = (0.2, 0.4, 0.9)
    aspect: float = 3.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}; expected one of {KINDS}")
        if self.texture not in TEXTURES:
            raise ValueError(f"unknown texture {self.texture!r}")

    @property
    def half_extents(self) -> np.ndarray:
        """Box half-sizes scaled so the corners touch the unit sphere."""
        if self.kind == "cube":
            return np.full(3, 1.0 / np.sqrt(3.0))
        if self.kind == "box":
            b = 1.0 / np.sqrt(self.aspect**2 + 2.0)
            return np.array([self.aspect * b, b, b])
        raise AttributeError(f"{self.kind} has no half extents")

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points)
        if self.kind in ("sphere", "two-tone sphere"):
            return np.sum(p * p, axis=-1) <= 1.0
        return np.all(np.abs(p) <= self.half_extents, axis=-1)

    def surface_points(self, n: int = 2048, seed: int = 0) -> np.ndarray:
        """Uniform samples on the shape surface."""
        rng = np.random.default_rng(seed)
        if self.kind in ("sphere", "two-tone sphere"):
            p = rng.standard_normal((n, 3))
            return p / np.linalg.norm(p, axis=1, keepdims=True)
        h = self.half_extents
        areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
        axis = rng.choice(3, size=n, p=areas / areas.sum())
        p = rng.uniform(-1.0, 1.0, (n, 3)) * h
        sign = rng.choice([-1.0, 1.0], size=n)
        p[np.arange(n), axis] = sign * h[axis]
        return p

    def shade(self, p: np.ndarray) -> np.ndarray:
        if self.texture == "gradient":
            rgb = np.clip(0.5 * (p + 1.0), 0.0, 1.0)
        elif self.texture == "octant":
            # one colour per sign pattern; sharp edges make rotation observable
            rgb = np.where(p >= 0, 0.85, 0.15)
        else:
            rgb = np.broadcast_to(np.asarray(self.color, dtype=np.float64), p.shape).copy()
        if self.kind == "two-tone sphere":
            rgb = np.where(p[..., :1] >= 0, rgb, np.asarray(self.color2))
        return rgb

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest positive ray parameter for rays origin + s*dirs (dirs unit, origin shared).

        Returns (hit, s); s is inf where the ray misses.
        """
        if self.kind in ("sphere", "two-tone sphere"):
            b = dirs @ origin
            c = origin @ origin - 1.0
            disc = b * b - c
            with np.errstate(invalid="ignore"):
                s = -b - np.sqrt(disc)
            hit = (disc >= 0) & (s > 0)
        else:
            h = self.half_extents
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (-h - origin) / dirs
                t2 = (h - origin) / dirs
            near = np.nanmax(np.minimum(t1, t2), axis=-1)
            far = np.nanmin(np.maximum(t1, t2), axis=-1)
            s = near
            hit = (far >= near) & (near > 0)
        return hit, np.where(hit, s, np.inf)


def trace(shape: SyntheticShape, pose: Pose, K: CameraIntrinsics, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Ray-trace an image and exact mask (no anti-aliasing, black background)."""
    m, l = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    dirs_cam = ray_directions(K, l, m)
    origin = pose.inverse_apply(np.zeros(3))
    dirs = dirs_cam @ pose.R
    hit, s = shape.intersect(origin, dirs)
    p = origin + np.where(hit, s, 0.0)[..., None] * dirs
    rgb = np.where(hit[..., None], shape.shade(p), 0.0)
    return rgb, hit


def sample_view_pose(rng: np.random.Generator, K: CameraIntrinsics, width: int, height: int, dist_range=(3.0, 8.0), jitter: float = 0.1) -> Pose:
    """Random rotation; centre on a ray near the image centre at distance in dist_range."""
    R = random_rotation(rng)
    dist = rng.uniform(*dist_range)
    l = 0.5 * (width - 1) + rng.uniform(-jitter, jitter) * width
    m = 0.5 * (height - 1) + rng.uniform(-jitter, jitter) * height
    u = ray_directions(K, np.array(l), np.array(m))
    return Pose(R, dist * u)


def look_at_pose(direction, distance: float) -> Pose:
    """Pose of a camera placed at distance * direction (object frame) looking at the origin."""
    z = np.asarray(direction, dtype=np.float64)
    z = z / np.linalg.norm(z)
    up = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    # rows are the camera axes in object coordinates; the camera looks along its -z
    R = np.stack([x, y, z])
    return Pose(R, -R @ (distance * z))


AXIS_DIRECTIONS = tuple(np.array(v, dtype=np.float64) for v in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)])


def default_intrinsics(image_size: int = 128) -> CameraIntrinsics:
    f = 0.95 * image_size
    c = 0.5 * (image_size - 1)
    return CameraIntrinsics(f, f, c, c)


def synth_scene(
    shape: SyntheticShape,
    n_views: int,
    K: CameraIntrinsics | None = None,
    image_size: int = 128,
    seed: int = 0,
    out_dir=None,
    poses: list[Pose] | None = None,
    object_id: str = "obj",
    dist_range: tuple[float, float] = (3.0, 8.0),
):
    """Render n_views seeded views of the shape.

    Returns (manifest, observations).  When out_dir is given the images
    (PNG), masks (PNG) and manifest.json are written there.
    """
    from .carving import Observation

    if n_views < 1:
        raise ValueError("n_views must be at least 1")
    K = default_intrinsics(image_size) if K is None else K
    rng = np.random.default_rng(seed)
    if poses is None:
        poses = [sample_view_pose(rng, K, image_size, image_size, dist_range) for _ in range(n_views)]
    root = Path(out_dir) if out_dir is not None else Path(".")
    if out_dir is not None:
        root.mkdir(parents=True, exist_ok=True)
    frames, observations = [], []
    for i, pose in enumerate(poses):
        rgb, mask = trace(shape, pose, K, image_size, image_size)
        box = BoundingBox.from_mask(mask) if mask.any() else BoundingBox.full_image(image_size, image_size)
        img_name, mask_name = f"frame{i}.png", f"mask{i}.png"
        if out_dir is not None:
            write_image(root / img_name, rgb)
            write_mask(root / mask_name, mask)
        frames.append(Frame(i, img_name, mask_name, object_id, pose, K, box))
        observations.append(Observation(rgb, mask, pose, K, box, i))
    objects = [{"id": object_id, "d_real": 2.0, "shape": asdict(shape)}]
    manifest = SceneManifest(objects, frames, "neg_z_forward", root)
    if out_dir is not None:
        save_manifest(manifest, root / "manifest.json")
    return manifest, observations
