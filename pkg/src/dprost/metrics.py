"""Pose accuracy metrics: ADD, ADD-S, thresholded accuracy, AUC, Proj2D and per-axis errors."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyPointSet, PointBehindCamera
from .objectives import pm_loss
from .pose import CameraIntrinsics, Pose, geodesic_distance, project_points


def _points(points) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        raise EmptyPointSet("point set is empty")
    return p


def add_metric(pred: Pose, gt: Pose, points) -> float:
    """Mean distance between matched points; the same quantity as the PM loss."""
    return pm_loss(pred, gt, _points(points))


def add_s_metric(pred: Pose, gt: Pose, points) -> float:
    """Mean distance from each gt-transformed point to the nearest pred-transformed point."""
    p = _points(points)
    dist, _ = cKDTree(pred.apply(p)).query(gt.apply(p), k=1)
    return float(np.mean(dist))


def threshold_accuracy(values, d: float, thr_ratio: float = 0.1) -> float:
    """Fraction of errors strictly below thr_ratio * d."""
    if not (d > 0 and thr_ratio > 0):
        raise ValueError("diameter and threshold ratio must be positive")
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return 0.0
    return float(np.mean(v < thr_ratio * d))


def auc_add_s(values, max_thr: float = 0.1, steps: int = 1000) -> float:
    """Area under the accuracy-vs-threshold curve on [0, max_thr], normalised to [0, 1].

    Trapezoidal rule on ``steps`` intervals; errors at or beyond max_thr never count.
    """
    if not max_thr > 0:
        raise ValueError("max_thr must be positive")
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return 0.0
    v = np.where(v >= max_thr, np.inf, v)
    thr = np.linspace(0.0, max_thr, steps + 1)
    acc = np.mean(v[None, :] <= thr[:, None], axis=1)
    return float(np.trapezoid(acc, thr) / max_thr)


def proj2d(pred: Pose, gt: Pose, points, K: CameraIntrinsics) -> float:
    """Mean pixel distance between the projections of the points under both poses."""
    p = _points(points)
    a = pred.apply(p)
    b = gt.apply(p)
    if np.any(a[:, 2] >= 0) or np.any(b[:, 2] >= 0):
        raise PointBehindCamera("a transformed point is not in front of the camera")
    return float(np.mean(np.linalg.norm(project_points(K, a) - project_points(K, b), axis=-1)))


def pose_errors(pred: Pose, gt: Pose) -> tuple[float, np.ndarray]:
    return geodesic_distance(pred.R, gt.R), pred.t - gt.t


@dataclass
class MetricReport:
    add: float
    add_s: float
    add_real: float
    add_s_real: float
    add_correct: bool
    add_s_correct: bool
    proj2d: float
    rot_err: float
    trans_err: list[float]

    def to_json(self) -> dict:
        return asdict(self)


def evaluate_pose(pred: Pose, gt: Pose, points, K: CameraIntrinsics, scale: float = 1.0, thr_ratio: float = 0.1) -> MetricReport:
    """All per-frame metrics; ``scale`` converts normalised units to real units (d_real / 2)."""
    add = add_metric(pred, gt, points)
    add_s = add_s_metric(pred, gt, points)
    rot, trans = pose_errors(pred, gt)
    return MetricReport(
        add=add,
        add_s=add_s,
        add_real=add * scale,
        add_s_real=add_s * scale,
        add_correct=add < thr_ratio * 2.0,
        add_s_correct=add_s < thr_ratio * 2.0,
        proj2d=proj2d(pred, gt, points, K),
        rot_err=rot,
        trans_err=(trans * scale).tolist(),
    )


def summarize(reports: list[MetricReport], d_real: float = 2.0, thr_ratio: float = 0.1, auc_max_thr: float = 0.1) -> dict:
    """Aggregate per-frame reports; AUC is computed on ADD-S in real units."""
    add_real = [r.add_real for r in reports]
    add_s_real = [r.add_s_real for r in reports]
    return {
        "frames": len(reports),
        "add_accuracy": threshold_accuracy(add_real, d_real, thr_ratio),
        "add_s_accuracy": threshold_accuracy(add_s_real, d_real, thr_ratio),
        "auc_add_s": auc_add_s(add_s_real, auc_max_thr),
        "mean_proj2d": float(np.mean([r.proj2d for r in reports])) if reports else 0.0,
        "mean_rot_err_deg": float(np.degrees(np.mean([r.rot_err for r in reports]))) if reports else 0.0,
        "thr_ratio": thr_ratio,
    }
