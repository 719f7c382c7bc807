from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from dprost.pose import CameraIntrinsics, Pose, random_rotation

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def K():
    return CameraIntrinsics(500.0, 500.0, 320.0, 240.0)


def random_pose(rng, dist=(2.0, 10.0)) -> Pose:
    """Random rotation with the object in front of the camera near the optical axis."""
    d = rng.uniform(*dist)
    u = np.array([rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), -1.0])
    return Pose(random_rotation(rng), d * u / np.linalg.norm(u))


def random_intrinsics(rng) -> CameraIntrinsics:
    f = rng.uniform(200, 800)
    return CameraIntrinsics(f * rng.uniform(0.9, 1.1), f * rng.uniform(0.9, 1.1), rng.uniform(100, 400), rng.uniform(100, 300))
