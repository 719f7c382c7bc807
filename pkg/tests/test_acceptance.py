"""Acceptance criteria 1-9; each test prints one PASS/FAIL line."""
from __future__ import annotations

import time

import numpy as np
import pytest

from dprost.carving import VoxelFeature, carve, select_references, voxel_centers
from dprost.dataset import load_feature, load_manifest, manifest_to_json, save_feature, save_manifest
from dprost.grid import RayGrid, crop_grid, object_grid, pushed_points, push_grid, transform_grid
from dprost.metrics import add_metric, add_s_metric, auc_add_s, proj2d
from dprost.objectives import GridObjective, LossConfig, gm_loss, loss_gradient, pm_loss, total_loss
from dprost.pose import (
    BoundingBox,
    CameraIntrinsics,
    Pose,
    PoseDelta,
    axis_angle_to_matrix,
    random_rotation,
)
from dprost.projector import composite, crop_image, render, sample_feature, trilinear
from dprost.refiner import RefinerConfig, refine
from dprost.synth import AXIS_DIRECTIONS, SyntheticShape, look_at_pose, synth_scene

from conftest import random_intrinsics, random_pose
from test_carving import hull_oracle
from test_projector import trilinear_oracle

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(n: int, name: str, ok: bool, detail: str = "") -> None:
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, f"criterion {n} failed: {detail}"

    return emit


def perturb(rng, gt: Pose, max_deg: float, max_frac: float) -> Pose:
    d = rng.standard_normal(3)
    d /= np.linalg.norm(d)
    R = axis_angle_to_matrix(rng.standard_normal(3), np.radians(rng.uniform(0, max_deg))) @ gt.R
    return Pose(R, gt.t + d * rng.uniform(0, max_frac) * np.linalg.norm(gt.t))


def test_1_grid_geometry(report):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst_ball = worst_round_trip = 0.0
    ordered = in_range = True
    for _ in range(100_000):
        K = random_intrinsics(rng)
        B = BoundingBox(rng.uniform(0, 400), rng.uniform(0, 300), rng.uniform(4, 200), rng.uniform(4, 200))
        d = rng.uniform(2, 10)
        u = rng.standard_normal(3)
        u[2] = -abs(u[2])
        T = Pose(random_rotation(rng), d * u / np.linalg.norm(u))
        cropped = crop_grid(K, B, 2, 8)
        pushed = push_grid(cropped, d)
        obj = transform_grid(pushed, T)
        worst_ball = max(worst_ball, np.linalg.norm(cropped.points, axis=-1).max())
        r = np.linalg.norm(pushed.points, axis=-1)
        ordered &= bool(np.all(np.diff(r, axis=-1) > 0))
        in_range &= bool(r.min() >= d - 1 - 1e-12 and r.max() <= d + 1 + 1e-12)
        worst_round_trip = max(worst_round_trip, np.abs(obj.points @ T.R.T + T.t - pushed.points).max())
    elapsed = time.perf_counter() - start
    ok = worst_ball <= 1 + 1e-12 and ordered and in_range and worst_round_trip < 1e-12 and elapsed < 30
    detail = f"max |g|={worst_ball:.15f} ordered={ordered} in [d-1,d+1]={in_range} round trip {worst_round_trip:.1e} in {elapsed:.1f}s"
    report(1, "grid geometry over 1e5 configurations", ok, detail)


def test_2_carving_oracle(report):
    start = time.perf_counter()
    K = CameraIntrinsics(120.0, 120.0, 63.5, 63.5)
    poses = [look_at_pose(d, 5.0) for d in AXIS_DIRECTIONS]
    mismatches = {}
    for kind in ("cube", "sphere"):
        _, obs = synth_scene(SyntheticShape(kind), 6, K=K, image_size=128, poses=poses)
        occ = carve(obs, 32).occupancy
        mismatches[kind] = int(np.sum(occ != hull_oracle(obs, 32)))
    elapsed = time.perf_counter() - start
    ok = all(v == 0 for v in mismatches.values()) and elapsed < 10
    report(2, "carving equals visual-hull oracle", ok, f"mismatches {mismatches} in {elapsed:.1f}s")


def test_3_projector_oracle(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(5):
        vals = rng.random((16, 16, 16, 3))
        g = object_grid(CameraIntrinsics(120, 120, 63.5, 63.5), BoundingBox(30, 30, 60, 60), random_pose(rng, (2.0, 5.0)), 8, 16)
        got = sample_feature(VoxelFeature(vals), g).reshape(-1, 3)
        ref = np.array([trilinear_oracle(vals, p) for p in g.points.reshape(-1, 3)])
        worst = max(worst, np.abs(got - ref).max())

    S = 16
    centres = voxel_centers(S)
    cases = near_wins = 0
    while cases < 1000:
        near, far = rng.integers(2, S - 2, 3), rng.integers(2, S - 2, 3)
        pn, pf = centres[tuple(near[::-1])], centres[tuple(far[::-1])]
        # both voxels well apart and inside the unit ball that every ray's samples span
        if np.linalg.norm(pn - pf) < 3 * np.sqrt(3) * 2 / S or max(np.linalg.norm(pn), np.linalg.norm(pf)) > 1 - 2 / S:
            continue
        # camera on the line through both voxel centres, beyond the near one
        axis = (pn - pf) / np.linalg.norm(pn - pf)
        cam = pn + rng.uniform(2.0, 5.0) * axis
        view = look_at_pose(cam, np.linalg.norm(cam))
        T = Pose(view.R, -view.R @ cam)
        u = T.R @ -axis
        pts = (pushed_points(u[None, None, :], 512, float(np.linalg.norm(T.t))) - T.t) @ T.R
        vals = np.zeros((S, S, S, 3))
        vals[tuple(near[::-1])] = (1, 0, 0)
        vals[tuple(far[::-1])] = (0, 1, 0)
        F = VoxelFeature(vals)
        s = trilinear(F.values, pts)
        plain = composite(s).pixels[0, 0]
        norm = composite(s, alpha=trilinear(F.alpha, pts)).pixels[0, 0]
        cases += 1
        near_wins += bool(plain[0] > 0 and plain[1] == 0 and norm[0] > 0 and norm[1] == 0)
    ok = worst < 1e-6 and near_wins == cases
    report(3, "trilinear oracle and occlusion", ok, f"max trilinear error {worst:.1e}; near voxel chosen in {near_wins}/{cases}")


def test_4_round_trip_render(report):
    shape = SyntheticShape("sphere")
    _, obs = synth_scene(shape, 41, image_size=128, seed=4)
    feature = carve(select_references(obs[:40], 8), 128)
    o = obs[40]
    app = render(feature, o.pose, o.K, o.box, 64, 128)
    target = crop_image(o.image, o.box, 128)
    mask = crop_image(o.mask.astype(float), o.box, 128) >= 0.5
    err = np.abs(app.pixels - target).mean(axis=-1)[mask].mean()
    iou = np.sum(mask & app.valid_mask) / np.sum(mask | app.valid_mask)
    report(4, "held-out sphere render", err < 0.05 and iou > 0.9, f"mean abs error {err:.4f}, IoU {iou:.4f}")


def test_5_loss_identities(report):
    rng = np.random.default_rng(5)
    K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0)
    B = BoundingBox(270.0, 190.0, 100.0, 100.0)
    cfg = LossConfig(out_res=8, n_z=8)
    offset_err = decomposition_err = pm_err = 0.0
    for _ in range(100):
        g = object_grid(K, B, random_pose(rng), 8, 8)
        d = rng.uniform(-1, 1, 3)
        offset_err = max(offset_err, abs(gm_loss(g, RayGrid(g.points + d, "object")) - np.linalg.norm(d)))
        lam = rng.uniform(0, 5)
        r = total_loss(random_pose(rng), random_pose(rng), K, B, LossConfig(out_res=8, n_z=8, lambda_gd=lam))
        decomposition_err = max(decomposition_err, abs(r.total - (r.gm + lam * r.gd)))
        p = random_pose(rng)
        pm_err = max(pm_err, abs(pm_loss(Pose(p.R, p.t + d), p, rng.standard_normal((20, 3))) - np.linalg.norm(d)))
    worst_grad = 0.0
    for _ in range(100):
        gt, base = random_pose(rng, (3, 8)), random_pose(rng, (3, 8))
        obj = GridObjective(gt, K, B, cfg)
        a = loss_gradient(obj, base, PoseDelta(), K, method="analytic")
        f = loss_gradient(obj, base, PoseDelta(), K, method="richardson", h=1e-4)
        worst_grad = max(worst_grad, np.linalg.norm(a - f) / np.linalg.norm(a))
    ok = offset_err < 1e-12 and decomposition_err < 1e-12 and pm_err < 1e-12 and worst_grad < 1e-4
    detail = f"offset {offset_err:.1e}, decomposition {decomposition_err:.1e}, PM {pm_err:.1e}, gradient rel err {worst_grad:.1e}"
    report(5, "loss identities and gradient check", ok, detail)


def test_6_refiner_convergence(report):
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    im_cfg = RefinerConfig(mode="render_compare_im", out_res=32, n_z=32, inner_steps=50)
    gm_cfg = RefinerConfig(mode="supervised_gm", out_res=32, n_z=32)
    add_ok = gm_ok = trials = 0
    for kind, n in (("sphere", 17), ("cube", 17), ("box", 16)):
        shape = SyntheticShape(kind, texture="gradient")
        _, obs = synth_scene(shape, 64 + n, image_size=128, seed=60, dist_range=(3.0, 5.0))
        feature = carve(select_references(obs[:64], 8), 64)
        pts = shape.surface_points(1024)
        for o in obs[64:]:
            init = perturb(rng, o.pose, 15, 0.1)
            pose, _ = refine(init, crop_image(o.image, o.box, 32), feature, o.K, o.box, im_cfg)
            add_ok += add_metric(pose, o.pose, pts) < 0.1 * 2.0
            _, tr = refine(init, o.pose, None, o.K, o.box, gm_cfg)
            gm_ok += tr.final_objective < 1e-3
            trials += 1
    elapsed = time.perf_counter() - start
    ok = add_ok / trials >= 0.8 and gm_ok / trials >= 0.95 and elapsed < 300
    detail = f"IM ADD(0.1d) {add_ok}/{trials}, GM < 1e-3 {gm_ok}/{trials}, {elapsed:.0f}s"
    report(6, "refiner convergence", ok, detail)


def test_7_gm_vs_pm(report):
    shape = SyntheticShape("box", aspect=3.0)
    pts = shape.surface_points(2048)
    _, obs = synth_scene(shape, 25, image_size=128, seed=11, dist_range=(3.0, 5.0))
    rng = np.random.default_rng(7)
    errors = {"supervised_gm": [], "supervised_pm": []}
    for o in obs:
        # rotation about the long axis of the box
        theta = np.radians(rng.uniform(10, 45)) * rng.choice([-1, 1])
        init = Pose(o.pose.R @ axis_angle_to_matrix([1.0, 0.0, 0.0], theta), o.pose.t)
        for mode in errors:
            cfg = RefinerConfig(mode=mode, out_res=32, n_z=16, inner_steps=100)
            pose, _ = refine(init, o.pose, None, o.K, o.box, cfg, points=pts)
            rel = o.pose.R.T @ pose.R
            errors[mode].append(abs(np.degrees(np.arctan2(rel[2, 1], rel[1, 1]))))
    gm, pm = np.mean(errors["supervised_gm"]), np.mean(errors["supervised_pm"])
    report(7, "GM no worse than PM on axial rotation", gm <= pm, f"mean axial error GM {gm:.4f} deg, PM {pm:.4f} deg, gap {pm - gm:.4f} deg")


def test_8_metric_identities(report):
    rng = np.random.default_rng(8)
    violations = 0
    pts = rng.standard_normal((32, 3))
    for _ in range(10_000):
        a, b = random_pose(rng), random_pose(rng)
        violations += add_s_metric(a, b, pts) > add_metric(a, b, pts) + 1e-12
    auc_err = max(abs(auc_add_s(np.zeros(5), 0.1) - 1.0), abs(auc_add_s([0.1, 0.3], 0.1)), abs(auc_add_s([0.05], 0.1) - 0.5))
    K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0)
    x = np.array([[0.2, -0.1, 0.05]])
    closed = np.hypot(100.0, 50.0) * (1 / 4.95 - 1 / 5.95)
    p_err = abs(proj2d(Pose(np.eye(3), [0, 0, -6.0]), Pose(np.eye(3), [0, 0, -5.0]), x, K) - closed)
    ok = violations == 0 and auc_err <= 1e-3 and p_err < 1e-9
    report(8, "metric identities", ok, f"add_s > add in {violations}/10000, AUC error {auc_err:.1e}, proj2d error {p_err:.1e}")


def test_9_determinism_and_io(report, tmp_path):
    shape = SyntheticShape("box", texture="gradient")
    runs = []
    for d in ("a", "b"):
        synth_scene(shape, 6, image_size=64, seed=9, out_dir=tmp_path / d)
    files_equal = all(f.read_bytes() == (tmp_path / "b" / f.name).read_bytes() for f in (tmp_path / "a").iterdir())
    m = load_manifest(tmp_path / "a" / "manifest.json")
    obs = m.observations()
    for threads in (1, 2, 3):
        runs.append(carve(obs, 32, threads=threads).values.tobytes())
    carve_equal = len(set(runs)) == 1
    o = obs[0]
    init = perturb(np.random.default_rng(9), o.pose, 10, 0.05)
    cfg = RefinerConfig(mode="render_compare_im", out_res=16, n_z=16, inner_steps=10)
    feature = carve(obs, 32)
    traces = [refine(init, crop_image(o.image, o.box, 16), feature, o.K, o.box, cfg)[1].to_json() for _ in range(2)]
    refine_equal = traces[0] == traces[1]
    save_feature(feature, tmp_path / "f.dpvf")
    dpvf_equal = load_feature(tmp_path / "f.dpvf").values.tobytes() == feature.values.astype(np.float32).tobytes()
    save_manifest(m, tmp_path / "a" / "m2.json")
    manifest_equal = manifest_to_json(load_manifest(tmp_path / "a" / "m2.json")) == manifest_to_json(m)
    ok = files_equal and carve_equal and refine_equal and dpvf_equal and manifest_equal
    detail = f"synth {files_equal}, carve across threads {carve_equal}, refine {refine_equal}, dpvf {dpvf_equal}, manifest {manifest_equal}"
    report(9, "determinism and lossless I/O", ok, detail)
