"""Rigid poses, pinhole cameras and the 9-parameter disentangled pose update.

Internal camera convention: +x right, +y down, the camera looks along -z and
the image plane sits at z = -f.  A camera-space point (X, Y, Z) with Z < 0
projects to pixel (px - fx*X/Z, py - fy*Y/Z).  Pixel centres lie on integer
coordinates.

Object space is normalised so the object fits the unit ball (diameter 2).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBox, DegenerateRotationInput, InvalidBasisChange, InvalidPose

OBJECT_DIAMETER = 2.0
EPS = 1e-8

# Basis change between +z-forward (OpenCV style) sources and the internal frame.
POS_Z_FORWARD = np.diag([1.0, 1.0, -1.0])
CONVENTIONS = {"neg_z_forward": np.eye(3), "pos_z_forward": POS_Z_FORWARD}


@dataclass(frozen=True, eq=False)
class Pose:
    """Object-to-camera transform x_cam = R @ x_obj + t."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls, t=(0.0, 0.0, -1.0)) -> Pose:
        return cls(np.eye(3), t)

    def validate(self, tol: float = 1e-6) -> Pose:
        err = np.abs(self.R.T @ self.R - np.eye(3)).max()
        det = np.linalg.det(self.R)
        if not np.all(np.isfinite(self.R)) or not np.all(np.isfinite(self.t)):
            raise InvalidPose("pose contains non-finite values")
        if err > tol or abs(det - 1.0) > tol:
            raise InvalidPose(f"R is not a rotation (|RtR-I|={err:.3g}, det={det:.6f})")
        if self.t[2] >= 0:
            raise InvalidPose(f"t_z={self.t[2]:.4g} must be negative (camera looks along -z)")
        return self

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.R.T + self.t

    def inverse_apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.t) @ self.R

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        return np.allclose(self.R, other.R, atol=atol, rtol=0) and np.allclose(self.t, other.t, atol=atol, rtol=0)

    def to_json(self, convention: str = "neg_z_forward") -> dict:
        p = convert_convention(self, CONVENTIONS[convention]) if convention != "neg_z_forward" else self
        return {"R": p.R.ravel().tolist(), "t": p.t.tolist(), "convention": convention}

    @classmethod
    def from_json(cls, obj: dict) -> Pose:
        from .errors import ConventionUnknown

        convention = obj.get("convention", "neg_z_forward")
        if convention not in CONVENTIONS:
            raise ConventionUnknown(f"unknown camera convention {convention!r}")
        p = cls(np.asarray(obj["R"], dtype=np.float64).reshape(3, 3), obj["t"])
        if convention != "neg_z_forward":
            p = convert_convention(p, CONVENTIONS[convention])
        return p


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    px: float
    py: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def f_mean(self) -> float:
        return 0.5 * (self.fx + self.fy)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.px], [0.0, self.fy, self.py], [0.0, 0.0, 1.0]])

    def scaled(self, s: float) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx * s, self.fy * s, self.px * s, self.py * s)

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "px": self.px, "py": self.py}

    @classmethod
    def from_json(cls, obj: dict) -> CameraIntrinsics:
        return cls(float(obj["fx"]), float(obj["fy"]), float(obj["px"]), float(obj["py"]))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in continuous pixel coordinates.

    (x, y) is the top-left corner.  Pixel l covers [l - 0.5, l + 0.5], so the
    box covering a whole W x H image is (-0.5, -0.5, W, H).
    """

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise DegenerateBox(f"box extent must be positive, got w={self.w}, h={self.h}")

    @property
    def center(self) -> tuple[float, float]:
        return self.x + 0.5 * self.w, self.y + 0.5 * self.h

    def squared(self, scale: float = 1.0) -> BoundingBox:
        """Expand the shorter side symmetrically so the box is square, then scale about the centre."""
        cx, cy = self.center
        side = max(self.w, self.h) * scale
        return BoundingBox(cx - 0.5 * side, cy - 0.5 * side, side, side)

    def iou(self, other: BoundingBox) -> float:
        ix = max(0.0, min(self.x + self.w, other.x + other.w) - max(self.x, other.x))
        iy = max(0.0, min(self.y + self.h, other.y + other.h) - max(self.y, other.y))
        inter = ix * iy
        return inter / (self.w * self.h + other.w * other.h - inter)

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def full_image(cls, width: int, height: int) -> BoundingBox:
        return cls(-0.5, -0.5, float(width), float(height))

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> BoundingBox:
        rows = np.flatnonzero(np.any(mask, axis=1))
        cols = np.flatnonzero(np.any(mask, axis=0))
        if rows.size == 0:
            raise DegenerateBox("empty mask has no bounding box")
        return cls(cols[0] - 0.5, rows[0] - 0.5, float(cols[-1] - cols[0] + 1), float(rows[-1] - rows[0] + 1))


@dataclass(frozen=True, eq=False)
class PoseDelta:
    """Disentangled update: image-space shift (v_x, v_y), depth ratio v_z, rotation (e_1, e_2)."""

    v_x: float = 0.0
    v_y: float = 0.0
    v_z: float = 1.0
    e_1: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    e_2: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))

    def __post_init__(self):
        object.__setattr__(self, "e_1", np.array(self.e_1, dtype=np.float64).reshape(3))
        object.__setattr__(self, "e_2", np.array(self.e_2, dtype=np.float64).reshape(3))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.v_x, self.v_y, self.v_z], self.e_1, self.e_2])

    @classmethod
    def from_vector(cls, v) -> PoseDelta:
        v = np.asarray(v, dtype=np.float64)
        return cls(float(v[0]), float(v[1]), float(v[2]), v[3:6], v[6:9])

    @property
    def rotation(self) -> np.ndarray:
        return rotation_from_6d(self.e_1, self.e_2)


IDENTITY_DELTA_VECTOR = PoseDelta().to_vector()


def project_points(K: CameraIntrinsics, points_cam: np.ndarray) -> np.ndarray:
    """Pinhole projection under the internal convention. No visibility check."""
    p = np.asarray(points_cam, dtype=np.float64)
    z = p[..., 2]
    u = K.px - K.fx * p[..., 0] / z
    v = K.py - K.fy * p[..., 1] / z
    return np.stack([u, v], axis=-1)


def rotation_from_6d(e_1, e_2) -> np.ndarray:
    """Rotation matrix with columns (r1, r2, r3) built from two 3-vectors.

    r1 = e1/|e1|, r3 = normalise(r1 x e2), r2 = r3 x r1.  Positive rescaling of
    either input leaves the result unchanged.
    """
    e_1 = np.asarray(e_1, dtype=np.float64)
    e_2 = np.asarray(e_2, dtype=np.float64)
    n1 = np.linalg.norm(e_1)
    n2 = np.linalg.norm(e_2)
    if not (n1 > EPS and n2 > EPS):
        raise DegenerateRotationInput(f"rotation vectors too small: |e1|={n1:.3g}, |e2|={n2:.3g}")
    r1 = e_1 / n1
    c = np.cross(r1, e_2 / n2)
    nc = np.linalg.norm(c)
    # nc is the sine of the angle between e1 and e2
    if not nc > EPS:
        raise DegenerateRotationInput("e1 and e2 are parallel")
    r3 = c / nc
    r2 = np.cross(r3, r1)
    return np.stack([r1, r2, r3], axis=1)


def rotation_from_6d_vjp(e_1, e_2, grad_R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pull dL/dR back through rotation_from_6d to (dL/de1, dL/de2)."""
    e_1 = np.asarray(e_1, dtype=np.float64)
    e_2 = np.asarray(e_2, dtype=np.float64)
    n1 = np.linalg.norm(e_1)
    r1 = e_1 / n1
    c = np.cross(r1, e_2)
    nc = np.linalg.norm(c)
    r3 = c / nc
    g1, g2, g3 = grad_R[:, 0], grad_R[:, 1], grad_R[:, 2]
    # r2 = r3 x r1
    g3 = g3 + np.cross(r1, g2)
    g1 = g1 + np.cross(g2, r3)
    # r3 = c/|c|
    gc = (g3 - r3 * (r3 @ g3)) / nc
    # c = r1 x e2
    g1 = g1 + np.cross(e_2, gc)
    ge2 = np.cross(gc, r1)
    # r1 = e1/|e1|
    ge1 = (g1 - r1 * (r1 @ g1)) / n1
    return ge1, ge2


def apply_delta(prev: Pose, delta: PoseDelta, K: CameraIntrinsics) -> Pose:
    """Update a pose with a disentangled delta.

    t_z' = v_z t_z and t_x'/t_z' = v_x/f_x + t_x/t_z (same for y); the relative
    rotation multiplies on the left.
    """
    tx, ty, tz = prev.t
    if tz == 0:
        raise InvalidPose("previous pose has t_z = 0")
    tz_new = delta.v_z * tz
    # (v/f + t/t_z) * t_z' expanded so the identity delta reproduces t bit for bit
    t_new = np.array([delta.v_x * tz_new / K.fx + tx * delta.v_z, delta.v_y * tz_new / K.fy + ty * delta.v_z, tz_new])
    return Pose(delta.rotation @ prev.R, t_new)


def apply_delta_vjp(prev: Pose, delta: PoseDelta, K: CameraIntrinsics, grad_R: np.ndarray, grad_t: np.ndarray) -> np.ndarray:
    """Gradient of L(apply_delta(prev, delta)) with respect to delta.to_vector()."""
    tx, ty, tz = prev.t
    kx = delta.v_x / K.fx + tx / tz
    ky = delta.v_y / K.fy + ty / tz
    tz_new = delta.v_z * tz
    gx, gy, gz = grad_t
    g = np.empty(9)
    g[0] = gx * tz_new / K.fx
    g[1] = gy * tz_new / K.fy
    g[2] = (gx * kx + gy * ky + gz) * tz
    ge1, ge2 = rotation_from_6d_vjp(delta.e_1, delta.e_2, grad_R @ prev.R.T)
    g[3:6] = ge1
    g[6:9] = ge2
    return g


def extract_delta(prev: Pose, nxt: Pose, K: CameraIntrinsics) -> PoseDelta:
    """Inverse of apply_delta: the delta taking prev to nxt."""
    tx, ty, tz = prev.t
    nx, ny, nz = nxt.t
    if tz == 0 or nz == 0:
        raise InvalidPose("t_z must be nonzero for both poses")
    R_rel = nxt.R @ prev.R.T
    return PoseDelta(
        v_x=K.fx * (nx / nz - tx / tz),
        v_y=K.fy * (ny / nz - ty / tz),
        v_z=nz / tz,
        e_1=R_rel[:, 0],
        e_2=R_rel[:, 1],
    )


def initial_pose(B: BoundingBox, K: CameraIntrinsics, diameter: float = OBJECT_DIAMETER) -> Pose:
    """Identity-rotation pose whose unit-ball projection fills the box.

    |t_z| = (d/2)(f_x/w + f_y/h), and t_x, t_y place the object centre on the
    box centre.
    """
    cx, cy = B.center
    depth = 0.5 * diameter * (K.fx / B.w + K.fy / B.h)
    tz = -depth
    # u = px - fx*tx/tz  =>  tx = (cx - px) * |tz| / fx
    tx = (cx - K.px) * depth / K.fx
    ty = (cy - K.py) * depth / K.fy
    return Pose(np.eye(3), [tx, ty, tz])


def geodesic_distance(R_a: np.ndarray, R_b: np.ndarray) -> float:
    """Angle in [0, pi] of the relative rotation R_a^T R_b."""
    c = (np.trace(np.asarray(R_a).T @ np.asarray(R_b)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def convert_convention(p: Pose, basis_change: np.ndarray) -> Pose:
    """Re-express a pose under a signed-permutation change of camera axes.

    R' = D R D and t' = D t.  An object point x seen through the source pose
    lands on the same pixel as D x seen through the converted pose; D is its
    own inverse, so applying the conversion twice restores the pose.
    """
    D = np.asarray(basis_change, dtype=np.float64)
    if D.shape != (3, 3):
        raise InvalidBasisChange(f"basis change must be 3x3, got {D.shape}")
    ok = np.all(np.isin(D, (-1.0, 0.0, 1.0))) and np.all(np.abs(D).sum(axis=0) == 1) and np.all(np.abs(D).sum(axis=1) == 1)
    if not ok:
        raise InvalidBasisChange("basis change must be a signed permutation matrix")
    return Pose(D @ p.R @ D, D @ p.t)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation (via a normalised Gaussian quaternion)."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return quaternion_to_matrix(q)


def quaternion_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def axis_angle_to_matrix(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return quaternion_to_matrix(np.concatenate([[np.cos(h)], np.sin(h) * axis]))
