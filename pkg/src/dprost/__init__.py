"""Dynamic projective spatial transformer pose refinement on voxel reference features."""
from .carving import Observation, VoxelFeature, carve, select_references
from .grid import RayGrid, crop_grid, form_grid, object_grid, push_grid, transform_grid
from .objectives import LossConfig, LossReport, gd_loss, gm_loss, im_loss, loss_gradient, pm_loss, total_loss
from .pose import (
    BoundingBox,
    CameraIntrinsics,
    Pose,
    PoseDelta,
    apply_delta,
    extract_delta,
    initial_pose,
    rotation_from_6d,
)
from .projector import Appearance, render
from .refiner import RefinerConfig, RefinementTrace, refine

__version__ = "0.1.0"

__all__ = [
    "Appearance",
    "BoundingBox",
    "CameraIntrinsics",
    "LossConfig",
    "LossReport",
    "Observation",
    "Pose",
    "PoseDelta",
    "RayGrid",
    "RefinementTrace",
    "RefinerConfig",
    "VoxelFeature",
    "apply_delta",
    "carve",
    "crop_grid",
    "extract_delta",
    "form_grid",
    "gd_loss",
    "gm_loss",
    "im_loss",
    "initial_pose",
    "loss_gradient",
    "object_grid",
    "pm_loss",
    "push_grid",
    "refine",
    "render",
    "rotation_from_6d",
    "select_references",
    "total_loss",
    "transform_grid",
]
