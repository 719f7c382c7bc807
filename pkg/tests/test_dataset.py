from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from dprost.carving import VoxelFeature
from dprost.dataset import (
    load_feature,
    load_manifest,
    load_predictions,
    manifest_to_json,
    read_image,
    read_mask,
    save_feature,
    save_manifest,
    save_predictions,
    write_image,
    write_mask,
)
from dprost.errors import ConventionUnknown, FormatError, ParseError, TruncatedFile
from dprost.grid import ray_directions
from dprost.pose import POS_Z_FORWARD, Pose, project_points
from dprost.synth import SyntheticShape, default_intrinsics, synth_scene

from conftest import random_pose


def write_frame_files(root, name="f0"):
    write_image(root / f"{name}.png", np.zeros((4, 4, 3)))
    write_mask(root / f"{name}_mask.png", np.ones((4, 4), bool))


def minimal_manifest(convention="neg_z_forward", pose=None, d_real=2.0):
    pose = pose or {"R": np.eye(3).ravel().tolist(), "t": [0.1, -0.2, -5.0]}
    return {
        "convention": convention,
        "objects": [{"id": "obj", "d_real": d_real}],
        "frames": [
            {
                "id": 0,
                "image": "f0.png",
                "mask": "f0_mask.png",
                "object": "obj",
                "pose": pose,
                "intrinsics": {"fx": 500.0, "fy": 510.0, "px": 320.0, "py": 240.0},
                "bbox": [10.0, 20.0, 30.0, 40.0],
            }
        ],
    }


class TestManifest:
    def test_round_trip(self, tmp_path):
        write_frame_files(tmp_path)
        data = minimal_manifest(d_real=80.0)
        (tmp_path / "m.json").write_text(json.dumps(data))
        save_manifest(load_manifest(tmp_path / "m.json"), tmp_path / "m2.json")
        assert json.loads((tmp_path / "m2.json").read_text()) == data

    def test_normalised_units(self, tmp_path):
        write_frame_files(tmp_path)
        (tmp_path / "m.json").write_text(json.dumps(minimal_manifest(d_real=80.0)))
        m = load_manifest(tmp_path / "m.json")
        np.testing.assert_allclose(m.frames[0].pose.t, np.array([0.1, -0.2, -5.0]) / 40.0)
        assert m.scale("obj") == 40.0

    def test_pos_z_forward_landmark(self, tmp_path, rng):
        write_frame_files(tmp_path)
        # source pose in a +z-forward camera: x right, y down, depth positive
        R = random_pose(rng).R
        t = np.array([3.0, -4.0, 400.0])
        landmark = np.array([12.0, -7.0, 25.0])
        cam = R @ landmark + t
        fx, fy, px, py = 500.0, 510.0, 320.0, 240.0
        pixel = np.array([fx * cam[0] / cam[2] + px, fy * cam[1] / cam[2] + py])
        data = minimal_manifest("pos_z_forward", {"R": R.ravel().tolist(), "t": t.tolist()}, d_real=100.0)
        (tmp_path / "m.json").write_text(json.dumps(data))
        f = load_manifest(tmp_path / "m.json").frames[0]
        # the conversion mirrors the object frame with the camera, so x becomes D x
        uv = project_points(f.K, f.pose.apply(POS_Z_FORWARD @ landmark / 50.0))
        np.testing.assert_allclose(uv, pixel, atol=1e-9)

    def test_missing_mask(self, tmp_path):
        write_frame_files(tmp_path)
        data = minimal_manifest()
        del data["frames"][0]["mask"]
        (tmp_path / "m.json").write_text(json.dumps(data))
        with pytest.raises(ParseError, match="mask"):
            load_manifest(tmp_path / "m.json")

    def test_missing_file(self, tmp_path):
        data = minimal_manifest()
        (tmp_path / "m.json").write_text(json.dumps(data))
        with pytest.raises(ParseError, match="not found"):
            load_manifest(tmp_path / "m.json")

    def test_unknown_convention(self, tmp_path):
        write_frame_files(tmp_path)
        (tmp_path / "m.json").write_text(json.dumps(minimal_manifest("sideways")))
        with pytest.raises(ConventionUnknown):
            load_manifest(tmp_path / "m.json")

    def test_bad_json_reports_line(self, tmp_path):
        (tmp_path / "m.json").write_text('{\n"objects": [,]\n}')
        with pytest.raises(ParseError, match="line 2"):
            load_manifest(tmp_path / "m.json")

    def test_pose_behind_camera(self, tmp_path):
        write_frame_files(tmp_path)
        data = minimal_manifest(pose={"R": np.eye(3).ravel().tolist(), "t": [0.0, 0.0, 5.0]})
        (tmp_path / "m.json").write_text(json.dumps(data))
        with pytest.raises(ParseError):
            load_manifest(tmp_path / "m.json")

    def test_idempotent(self, tmp_path):
        synth_scene(SyntheticShape("cube"), 3, image_size=32, seed=2, out_dir=tmp_path)
        a = load_manifest(tmp_path / "manifest.json")
        save_manifest(a, tmp_path / "again.json")
        b = load_manifest(tmp_path / "again.json")
        assert manifest_to_json(a) == manifest_to_json(b)


class TestSynth:
    @pytest.mark.parametrize("dist", [6.0, 8.0])
    def test_sphere_disc_radius(self, dist):
        K = default_intrinsics(128)
        pose = Pose(np.eye(3), [0.0, 0.0, -dist])
        _, obs = synth_scene(SyntheticShape("sphere"), 1, K, 128, poses=[pose])
        mask = obs[0].mask
        m, l = np.nonzero(mask)
        radius = np.sqrt(mask.sum() / np.pi)
        assert abs(radius - K.fx / dist) <= 1.0
        assert abs(l.mean() - K.px) < 0.5 and abs(m.mean() - K.py) < 0.5
        # filled: every pixel closer than radius - 1 to the centre is set
        mm, ll = np.mgrid[0:128, 0:128]
        inner = np.hypot(ll - K.px, mm - K.py) < radius - 1
        assert mask[inner].all()

    def test_sphere_radius_exact_at_close_range(self):
        # close up, the silhouette radius is f / sqrt(d^2 - 1) rather than f / d
        K = default_intrinsics(128)
        _, obs = synth_scene(SyntheticShape("sphere"), 1, K, 128, poses=[Pose(np.eye(3), [0.0, 0.0, -3.0])])
        assert abs(np.sqrt(obs[0].mask.sum() / np.pi) - K.fx / np.sqrt(8.0)) <= 1.0

    def test_deterministic_files(self, tmp_path):
        for d in ("a", "b"):
            synth_scene(SyntheticShape("box", texture="gradient"), 3, image_size=32, seed=9, out_dir=tmp_path / d)
        for f in sorted((tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_distances_in_range(self):
        m, _ = synth_scene(SyntheticShape("sphere"), 20, image_size=32, seed=1)
        d = [np.linalg.norm(f.pose.t) for f in m.frames]
        assert min(d) >= 3.0 and max(d) <= 8.0

    def test_mask_is_analytic_silhouette(self, rng):
        shape = SyntheticShape("cube")
        K = default_intrinsics(48)
        pose = random_pose(rng, dist=(3, 5))
        _, obs = synth_scene(shape, 1, K, 48, poses=[pose])
        # dense sampling of each ray against the exact inside test
        m, l = np.mgrid[0:48, 0:48].astype(float)
        d = ray_directions(K, l, m) @ pose.R
        o = pose.inverse_apply(np.zeros(3))
        s = np.linspace(0, 10, 4001)
        hit = shape.contains(o + s[:, None, None, None] * d[None]).any(axis=0)
        # sampling can only miss grazing hits
        assert np.sum(hit & ~obs[0].mask) == 0
        assert np.sum(obs[0].mask & ~hit) <= 2

    def test_rejects_zero_views(self):
        with pytest.raises(ValueError):
            synth_scene(SyntheticShape(), 0)


class TestFeatureFormat:
    def test_round_trip(self, tmp_path, rng):
        f = VoxelFeature(rng.standard_normal((6, 6, 6, 3)).astype(np.float32))
        save_feature(f, tmp_path / "f.dpvf")
        g = load_feature(tmp_path / "f.dpvf")
        assert g.values.dtype == np.float32
        assert g.values.tobytes() == f.values.tobytes()

    def test_header(self, tmp_path, rng):
        save_feature(VoxelFeature(rng.uniform(size=(5, 5, 5, 1)).astype(np.float32)), tmp_path / "f.dpvf")
        raw = (tmp_path / "f.dpvf").read_bytes()
        assert raw[:4] == b"DPVF"
        version, S, C = np.frombuffer(raw[4:16], "<u4")
        assert (version, S, C) == (1, 5, 1)
        assert len(raw) == 16 + 4 * 125

    def test_bad_magic(self, tmp_path, rng):
        save_feature(VoxelFeature(np.zeros((2, 2, 2, 3), np.float32)), tmp_path / "f.dpvf")
        raw = bytearray((tmp_path / "f.dpvf").read_bytes())
        raw[0:4] = b"XXXX"
        (tmp_path / "f.dpvf").write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_feature(tmp_path / "f.dpvf")

    def test_truncated(self, tmp_path):
        save_feature(VoxelFeature(np.ones((4, 4, 4, 3), np.float32)), tmp_path / "f.dpvf")
        raw = (tmp_path / "f.dpvf").read_bytes()
        (tmp_path / "f.dpvf").write_bytes(raw[:-4])
        with pytest.raises(TruncatedFile):
            load_feature(tmp_path / "f.dpvf")
        (tmp_path / "f.dpvf").write_bytes(raw[:10])
        with pytest.raises(TruncatedFile):
            load_feature(tmp_path / "f.dpvf")

    def test_sidecar(self, tmp_path):
        save_feature(VoxelFeature(np.ones((2, 2, 2, 3), np.float32)), tmp_path / "f.dpvf", {"object": "cup"})
        assert load_feature(tmp_path / "f.dpvf").meta["object"] == "cup"


class TestImages:
    @given(st.integers(0, 2**32 - 1))
    def test_png_lossless_8bit(self, seed):
        import tempfile
        from pathlib import Path

        rng = np.random.default_rng(seed)
        img = rng.integers(0, 256, (7, 9, 3)) / 255.0
        with tempfile.TemporaryDirectory() as d:
            write_image(Path(d) / "x.png", img)
            np.testing.assert_array_equal(read_image(Path(d) / "x.png"), img)

    def test_mask_round_trip(self, tmp_path, rng):
        mask = rng.uniform(size=(12, 10)) > 0.5
        for ext in ("png", "pgm"):
            write_mask(tmp_path / f"m.{ext}", mask)
            np.testing.assert_array_equal(read_mask(tmp_path / f"m.{ext}"), mask)

    def test_portable_pixmaps(self, tmp_path, rng):
        rgb = rng.integers(0, 256, (5, 6, 3), dtype=np.uint8)
        gray = np.where(rng.uniform(size=(5, 6)) > 0.5, 255, 0).astype(np.uint8)
        (tmp_path / "x.ppm").write_bytes(b"P6\n6 5\n255\n" + rgb.tobytes())
        (tmp_path / "m.pgm").write_bytes(b"P5\n6 5\n255\n" + gray.tobytes())
        np.testing.assert_array_equal(read_image(tmp_path / "x.ppm"), rgb / 255.0)
        np.testing.assert_array_equal(read_mask(tmp_path / "m.pgm"), gray > 127)
        assert Image.open(tmp_path / "x.ppm").format == "PPM"


class TestPredictions:
    def test_round_trip(self, tmp_path, rng):
        preds = {"0": random_pose(rng), "7": random_pose(rng)}
        save_predictions(preds, tmp_path / "p.json", convention="pos_z_forward")
        back = load_predictions(tmp_path / "p.json")
        assert set(back) == {"0", "7"}
        for k in preds:
            assert back[k].allclose(preds[k], atol=1e-12)
