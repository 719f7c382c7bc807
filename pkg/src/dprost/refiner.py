"""Iterative pose refinement by numerical optimisation over the 9-parameter pose delta.

Each outer iteration starts a fresh delta at the identity and runs Adam (with
second moments shared per translation and rotation block) on
the chosen objective, accepting a step only if it does not increase the
objective (a rejected step halves the learning rate).  The accepted delta is
applied with ``apply_delta`` and the next iteration re-renders from the new
pose, mirroring a cascade of per-iteration estimators.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRotationInput, NonFiniteLoss
from .objectives import GridObjective, ImageObjective, LossConfig, PointObjective, fd_steps, loss_gradient
from .pose import (
    IDENTITY_DELTA_VECTOR,
    BoundingBox,
    CameraIntrinsics,
    Pose,
    PoseDelta,
    apply_delta,
    apply_delta_vjp,
    initial_pose,
)

log = logging.getLogger(__name__)

MODES = ("supervised_gm", "supervised_pm", "render_compare_im")
# second moments are shared within the translation and rotation blocks, so each
# block steps along its gradient direction instead of the per-coordinate sign
BLOCKS = (slice(0, 3), slice(3, 9))


@dataclass(frozen=True)
class RefinerConfig:
    outer_iters: int = 2
    inner_steps: int = 100
    step_size: float = 0.01
    mode: str = "supervised_gm"
    fd_step: float = 1e-2  # large enough that FD sees silhouette moves at coarse resolution
    convergence_tol: float = 1e-8
    seed: int = 0
    out_res: int = 128
    n_z: int = 64
    lambda_gd: float = 1.0
    min_step: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    regrow: float = 1.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.outer_iters < 1 or self.inner_steps < 1:
            raise ValueError("iteration counts must be at least 1")
        if not self.step_size > 0 or not self.fd_step > 0:
            raise ValueError("step_size and fd_step must be positive")

    @property
    def loss_config(self) -> LossConfig:
        return LossConfig(out_res=self.out_res, n_z=self.n_z, lambda_gd=self.lambda_gd)


@dataclass
class IterationRecord:
    pose: Pose
    objective: float
    steps: int
    losses: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"pose": self.pose.to_json(), "objective": self.objective, "steps": self.steps, "losses": self.losses}


@dataclass
class RefinementTrace:
    initial_objective: float = float("nan")
    iterations: list[IterationRecord] = field(default_factory=list)

    @property
    def final_objective(self) -> float:
        return self.iterations[-1].objective if self.iterations else self.initial_objective

    def to_json(self) -> dict:
        return {"initial_objective": self.initial_objective, "iterations": [it.to_json() for it in self.iterations]}


def initialize_from_box(B: BoundingBox, K: CameraIntrinsics) -> Pose:
    return initial_pose(B, K)


def make_objective(target, feature, K: CameraIntrinsics, B: BoundingBox, cfg: RefinerConfig, points=None):
    if cfg.mode == "supervised_gm":
        if not isinstance(target, Pose):
            raise TypeError("supervised_gm needs a ground-truth Pose target")
        return GridObjective(target, K, B, cfg.loss_config)
    if cfg.mode == "supervised_pm":
        if not isinstance(target, Pose) or points is None:
            raise TypeError("supervised_pm needs a Pose target and object points")
        return PointObjective(target, points)
    if feature is None:
        raise TypeError("render_compare_im needs a voxel feature")
    return ImageObjective(feature, target, K, B, cfg.loss_config)


class _DeltaProblem:
    """Objective as a function of scaled delta coordinates z (identity delta at z = 0)."""

    def __init__(self, objective, base: Pose, K: CameraIntrinsics, cfg: RefinerConfig):
        self.objective = objective
        self.base = base
        self.K = K
        self.cfg = cfg
        # pixel-valued v_x, v_y move in units of the mean focal length
        self.scale = fd_steps(K, 1.0)

    def delta(self, z: np.ndarray) -> PoseDelta:
        return PoseDelta.from_vector(IDENTITY_DELTA_VECTOR + self.scale * z)

    def pose(self, z: np.ndarray) -> Pose:
        return apply_delta(self.base, self.delta(z), self.K)

    def value(self, z: np.ndarray) -> float:
        v = self.objective(self.pose(z))
        if not np.isfinite(v):
            raise NonFiniteLoss(f"objective is {v}")
        return v

    def gradient(self, z: np.ndarray, lr: float = 0.0) -> np.ndarray:
        method = "analytic" if getattr(self.objective, "has_gradient", False) else "central_fd"
        delta = self.delta(z)
        g = loss_gradient(self.objective, self.base, delta, self.K, method=method, h=self.cfg.fd_step) * self.scale
        if hasattr(self.objective, "kink_offset") and self.cfg.lambda_gd > 0:
            g = self._kink_subgradient(g, delta, lr)
        return g

    def _kink_subgradient(self, g: np.ndarray, delta: PoseDelta, lr: float) -> np.ndarray:
        """Minimum-norm element of the subdifferential of the GD term when a step could cross its kink.

        Away from the kink the ordinary gradient is returned.  Within one step
        of it, lambda * sign(.) is replaced by the s in [-1, 1] that makes the
        gradient shortest, so steps slide along the matched-distance surface
        instead of bouncing across it.
        """
        pose = apply_delta(self.base, delta, self.K)
        g_R, g_t = self.objective.kink_gradient(pose)
        a = apply_delta_vjp(self.base, delta, self.K, g_R, g_t) * self.scale
        aa = float(a @ a)
        offset = self.objective.kink_offset(pose)
        band = np.sqrt(3.0) * lr * np.sqrt(aa) / self.cfg.lambda_gd
        if aa == 0.0 or abs(offset) > band:
            return g
        g0 = g - np.sign(offset) * a
        return g0 + np.clip(-(g0 @ a) / aa, -1.0, 1.0) * a


def _reset_rotation(z: np.ndarray) -> np.ndarray:
    z = z.copy()
    z[3:] = 0.0
    return z


def _block_mean(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    for b in BLOCKS:
        out[b] = x[b].mean()
    return out


def _optimize(problem: _DeltaProblem, cfg: RefinerConfig, trace: RefinementTrace) -> tuple[np.ndarray, float, list[float], int]:
    z = np.zeros(9)
    loss = problem.value(z)
    losses = [loss]
    m = np.zeros(9)
    v = np.zeros(9)
    lr = cfg.step_size
    grad = None
    fresh = True
    t = 0
    steps = 0
    eps = 1e-12
    for _ in range(cfg.inner_steps):
        if loss == 0.0 or lr < cfg.min_step * cfg.step_size:
            break
        if grad is None:
            try:
                grad = problem.gradient(z, lr)
            except DegenerateRotationInput:
                log.warning("rotation vectors became parallel; resetting to the canonical basis")
                z = _reset_rotation(z)
                loss = problem.value(z)
                continue
        if fresh:
            t += 1
            m = cfg.beta1 * m + (1 - cfg.beta1) * grad
            v = cfg.beta2 * v + (1 - cfg.beta2) * _block_mean(grad * grad)
            fresh = False
        steps += 1
        step = lr * (m / (1 - cfg.beta1**t)) / (np.sqrt(v / (1 - cfg.beta2**t)) + eps)
        candidate = z - step
        try:
            new_loss = problem.value(candidate)
        except DegenerateRotationInput:
            log.warning("rotation vectors became parallel; resetting to the canonical basis")
            candidate = _reset_rotation(candidate)
            new_loss = problem.value(candidate)
        except NonFiniteLoss as e:
            raise NonFiniteLoss(str(e), trace) from e
        fresh = True
        if new_loss <= loss:
            improvement = loss - new_loss
            z, loss, grad = candidate, new_loss, None
            losses.append(loss)
            if improvement < cfg.convergence_tol and lr < cfg.step_size:
                break
            lr = min(cfg.step_size, lr * cfg.regrow)
        else:
            # stale momentum caused the overshoot: restart the moments from the current gradient
            lr *= 0.5
            m[:] = 0.0
            v[:] = 0.0
            t = 0
    return z, loss, losses, steps


def refine(
    initial: Pose,
    target,
    feature,
    K: CameraIntrinsics,
    B: BoundingBox,
    cfg: RefinerConfig = RefinerConfig(),
    points=None,
    callback=None,
) -> tuple[Pose, RefinementTrace]:
    """Refine ``initial`` towards ``target``.

    target is a ground-truth Pose in the supervised modes and the observed
    (out_res, out_res, 3) crop in render_compare_im mode.  ``points`` is only
    needed for supervised_pm.  ``callback(i, pose)`` runs after each outer
    iteration (used for iteration renders).
    """
    objective = make_objective(target, feature, K, B, cfg, points)
    pose = initial
    trace = RefinementTrace()
    try:
        trace.initial_objective = float(objective(pose))
    except DegenerateRotationInput:
        raise
    if not np.isfinite(trace.initial_objective):
        raise NonFiniteLoss(f"initial objective is {trace.initial_objective}", trace)
    for i in range(cfg.outer_iters):
        problem = _DeltaProblem(objective, pose, K, cfg)
        try:
            z, loss, losses, steps = _optimize(problem, cfg, trace)
        except NonFiniteLoss as e:
            raise NonFiniteLoss(str(e), trace) from e
        pose = problem.pose(z)
        trace.iterations.append(IterationRecord(pose, float(loss), steps, [float(x) for x in losses]))
        if callback is not None:
            callback(i, pose)
    return pose, trace
