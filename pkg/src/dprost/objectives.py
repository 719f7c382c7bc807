"""Grid-matching, grid-distance, point-matching and image-matching objectives.

Objective objects evaluate a pose and, where possible, return the analytic
gradient with respect to (R, t); ``loss_gradient`` pulls either that or a
finite-difference estimate back to the 9 pose-delta parameters.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyPointSet, NonFiniteLoss, ShapeMismatch
from .grid import RayGrid, crop_grid, object_grid, pushed_points, zoom_box
from .pose import BoundingBox, CameraIntrinsics, Pose, PoseDelta, apply_delta, apply_delta_vjp


@dataclass(frozen=True)
class LossConfig:
    out_res: int = 128
    n_z: int = 64
    lambda_gd: float = 1.0
    zoom: bool = True


@dataclass(frozen=True)
class LossReport:
    gm: float
    gd: float
    total: float
    lambda_gd: float = 1.0
    pm: float | None = None
    im: float | None = None

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def gm_loss(pred_grid: RayGrid, gt_grid: RayGrid) -> float:
    """Mean Euclidean distance between corresponding object-space grid points."""
    pred_grid.require("object")
    gt_grid.require("object")
    if pred_grid.points.shape != gt_grid.points.shape:
        raise ShapeMismatch(f"grid shapes differ: {pred_grid.points.shape} vs {gt_grid.points.shape}")
    return float(np.mean(np.linalg.norm(gt_grid.points - pred_grid.points, axis=-1)))


def gd_loss(pred_t, gt_t) -> float:
    return float(abs(np.linalg.norm(gt_t) - np.linalg.norm(pred_t)))


def total_loss(pred: Pose, gt: Pose, K: CameraIntrinsics, B: BoundingBox, cfg: LossConfig = LossConfig()) -> LossReport:
    g_pred = object_grid(K, B, pred, cfg.out_res, cfg.n_z, zoom=cfg.zoom)
    g_gt = object_grid(K, B, gt, cfg.out_res, cfg.n_z, zoom=cfg.zoom)
    gm = gm_loss(g_pred, g_gt)
    gd = gd_loss(pred.t, gt.t)
    return LossReport(gm=gm, gd=gd, total=gm + cfg.lambda_gd * gd, lambda_gd=cfg.lambda_gd)


def pm_loss(pred: Pose, gt: Pose, points: np.ndarray) -> float:
    """Mean distance between the same object points under both poses."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise EmptyPointSet("point set is empty")
    return float(np.mean(np.linalg.norm(pred.apply(points) - gt.apply(points), axis=-1)))


def im_loss(pred_appearance, target) -> float:
    """Mean squared RGB difference over all pixels and channels."""
    a = getattr(pred_appearance, "pixels", pred_appearance)
    b = getattr(target, "pixels", target)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def _unit_rows(d: np.ndarray, n: int) -> np.ndarray:
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(norm > 0, d / norm, 0.0)
    return w / n


class GridObjective:
    """GM + lambda * GD against a fixed ground-truth pose."""

    has_gradient = True

    def __init__(self, gt: Pose, K: CameraIntrinsics, B: BoundingBox, cfg: LossConfig = LossConfig()):
        self.gt = gt
        self.cfg = cfg
        box = zoom_box(B) if cfg.zoom else B
        self.directions = crop_grid(K, box, cfg.out_res, 2).directions
        self.gt_dist = float(np.linalg.norm(gt.t))
        self.gt_points = self._pred_points(gt)[1]

    def _pred_points(self, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
        y = pushed_points(self.directions, self.cfg.n_z, float(np.linalg.norm(pose.t))) - pose.t
        return y, y @ pose.R

    def __call__(self, pose: Pose) -> float:
        _, q = self._pred_points(pose)
        gm = np.mean(np.linalg.norm(q - self.gt_points, axis=-1))
        return float(gm + self.cfg.lambda_gd * abs(self.gt_dist - np.linalg.norm(pose.t)))

    def components(self, pose: Pose) -> tuple[float, float]:
        _, q = self._pred_points(pose)
        return float(np.mean(np.linalg.norm(q - self.gt_points, axis=-1))), abs(self.gt_dist - float(np.linalg.norm(pose.t)))

    def pose_gradient(self, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
        y, q = self._pred_points(pose)
        w = _unit_rows(q - self.gt_points, q[..., 0].size).reshape(-1, 3)
        y = y.reshape(-1, 3)
        g_R = y.T @ w
        rw = w @ pose.R.T  # R w_i, the gradient with respect to the camera-space point
        dist = np.linalg.norm(pose.t)
        t_hat = pose.t / dist
        u = np.broadcast_to(self.directions[:, :, None, :], q.shape).reshape(-1, 3)
        g_t = t_hat * np.sum(rw * u) - rw.sum(axis=0)
        g_t = g_t + self.cfg.lambda_gd * np.sign(dist - self.gt_dist) * t_hat
        return g_R, g_t

    def kink_offset(self, pose: Pose) -> float:
        """Signed distance error; the GD term is not differentiable where it is 0."""
        return float(np.linalg.norm(pose.t)) - self.gt_dist

    def kink_gradient(self, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of lambda * ||t||, the direction the GD subgradient may scale within [-1, 1]."""
        return np.zeros((3, 3)), self.cfg.lambda_gd * pose.t / np.linalg.norm(pose.t)


class PointObjective:
    """PM loss against a fixed ground-truth pose."""

    has_gradient = True

    def __init__(self, gt: Pose, points: np.ndarray):
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise EmptyPointSet("point set is empty")
        self.gt = gt
        self.target = gt.apply(self.points)

    def __call__(self, pose: Pose) -> float:
        return float(np.mean(np.linalg.norm(pose.apply(self.points) - self.target, axis=-1)))

    def pose_gradient(self, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
        w = _unit_rows(pose.apply(self.points) - self.target, len(self.points))
        return w.T @ self.points, w.sum(axis=0)


class ImageObjective:
    """IM loss between the rendered feature and an observed crop."""

    has_gradient = False

    def __init__(self, feature, target, K: CameraIntrinsics, B: BoundingBox, cfg: LossConfig = LossConfig(), normalized: bool = True):
        self.feature = feature
        self.target = np.asarray(getattr(target, "pixels", target), dtype=np.float64)
        self.K = K
        self.B = B
        self.cfg = cfg
        self.normalized = normalized
        if self.target.shape[:2] != (cfg.out_res, cfg.out_res):
            raise ShapeMismatch(f"target crop {self.target.shape[:2]} does not match out_res {cfg.out_res}")

    def render(self, pose: Pose):
        from .projector import render

        return render(self.feature, pose, self.K, self.B, self.cfg.n_z, self.cfg.out_res, zoom=self.cfg.zoom, normalized=self.normalized)

    def __call__(self, pose: Pose) -> float:
        return im_loss(self.render(pose), self.target)


def fd_steps(K: CameraIntrinsics, h: float) -> np.ndarray:
    """Per-parameter FD steps: pixel-valued v_x, v_y scale with the mean focal length."""
    steps = np.full(9, h)
    steps[:2] = h * K.f_mean
    return steps


def _value(objective, base: Pose, theta: np.ndarray, K: CameraIntrinsics) -> float:
    val = objective(apply_delta(base, PoseDelta.from_vector(theta), K))
    if not np.isfinite(val):
        raise NonFiniteLoss(f"objective is {val}")
    return val


def _central(objective, base, theta, K, h) -> np.ndarray:
    steps = fd_steps(K, h)
    g = np.empty(9)
    for i in range(9):
        e = np.zeros(9)
        e[i] = steps[i]
        g[i] = (_value(objective, base, theta + e, K) - _value(objective, base, theta - e, K)) / (2 * steps[i])
    return g


def loss_gradient(objective, base: Pose, delta_point: PoseDelta, K: CameraIntrinsics, method: str = "central_fd", h: float = 1e-3) -> np.ndarray:
    """Gradient of objective(apply_delta(base, delta)) with respect to delta.to_vector().

    method: "analytic" (objectives with pose_gradient), "central_fd", or
    "richardson" (central differences at h and h/2, extrapolated).
    """
    theta = delta_point.to_vector()
    _value(objective, base, theta, K)
    if method == "analytic":
        if not getattr(objective, "has_gradient", False):
            raise ValueError(f"{type(objective).__name__} has no analytic gradient")
        pose = apply_delta(base, delta_point, K)
        g_R, g_t = objective.pose_gradient(pose)
        return apply_delta_vjp(base, delta_point, K, g_R, g_t)
    if method == "central_fd":
        return _central(objective, base, theta, K, h)
    if method == "richardson":
        return (4.0 * _central(objective, base, theta, K, h / 2) - _central(objective, base, theta, K, h)) / 3.0
    raise ValueError(f"unknown gradient method {method!r}")
