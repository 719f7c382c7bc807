"""Scene manifests, image and mask I/O, and binary formats for features and grid dumps."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .carving import Observation, VoxelFeature
from .errors import ConventionUnknown, FormatError, ParseError, TruncatedFile
from .grid import STAGES, RayGrid
from .pose import CONVENTIONS, BoundingBox, CameraIntrinsics, Pose, OBJECT_DIAMETER

FEATURE_MAGIC = b"DPVF"
GRID_MAGIC = b"DPRG"
FORMAT_VERSION = 1


@dataclass(eq=False)
class Frame:
    frame_id: int | str
    image: str
    mask: str
    object_id: str
    pose: Pose  # internal convention, normalised units
    K: CameraIntrinsics
    bbox: BoundingBox


@dataclass(eq=False)
class SceneManifest:
    objects: list[dict]
    frames: list[Frame]
    convention: str = "neg_z_forward"
    root: Path = field(default_factory=Path)

    def object_info(self, object_id: str) -> dict:
        for o in self.objects:
            if o["id"] == object_id:
                return o
        raise KeyError(object_id)

    def scale(self, object_id: str) -> float:
        """Real units per normalised unit (d_real / 2)."""
        return float(self.object_info(object_id)["d_real"]) / OBJECT_DIAMETER

    def frame(self, frame_id) -> Frame:
        for f in self.frames:
            if f.frame_id == frame_id or str(f.frame_id) == str(frame_id):
                return f
        raise KeyError(frame_id)

    def observation(self, frame: Frame | int) -> Observation:
        f = self.frames[frame] if isinstance(frame, int) else frame
        return Observation(
            image=read_image(self.root / f.image),
            mask=read_mask(self.root / f.mask),
            pose=f.pose,
            K=f.K,
            box=f.bbox,
            frame_id=f.frame_id,
        )

    def observations(self) -> list[Observation]:
        return [self.observation(f) for f in self.frames]


def _field(obj: dict, key: str, where: str):
    if key not in obj:
        raise ParseError(f"{where}: missing field {key!r}")
    return obj[key]


def load_manifest(path) -> SceneManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno}: {e.msg}") from e
    convention = data.get("convention", "neg_z_forward")
    if convention not in CONVENTIONS:
        raise ConventionUnknown(f"{path}: unknown convention {convention!r}")
    objects = _field(data, "objects", str(path))
    scales = {}
    for i, o in enumerate(objects):
        oid = _field(o, "id", f"objects[{i}]")
        d = float(_field(o, "d_real", f"objects[{i}]"))
        if not d > 0:
            raise ParseError(f"objects[{i}].d_real must be positive")
        scales[oid] = d / OBJECT_DIAMETER
    frames = []
    for i, fr in enumerate(_field(data, "frames", str(path))):
        where = f"frames[{i}]"
        oid = _field(fr, "object", where)
        if oid not in scales:
            raise ParseError(f"{where}.object: unknown object {oid!r}")
        image = _field(fr, "image", where)
        mask = _field(fr, "mask", where)
        for key, rel in (("image", image), ("mask", mask)):
            if not (path.parent / rel).exists():
                raise ParseError(f"{where}.{key}: file not found: {rel}")
        pose_obj = dict(_field(fr, "pose", where))
        pose_obj.setdefault("convention", convention)
        try:
            pose = Pose.from_json(pose_obj)
        except ConventionUnknown as e:
            raise ConventionUnknown(f"{where}.pose: {e}") from e
        except (KeyError, ValueError) as e:
            raise ParseError(f"{where}.pose: {e}") from e
        pose = Pose(pose.R, pose.t / scales[oid])
        try:
            pose.validate()
            K = CameraIntrinsics.from_json(_field(fr, "intrinsics", where))
            bbox = BoundingBox(*map(float, _field(fr, "bbox", where)))
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"{where}: {e}") from e
        frames.append(Frame(fr.get("id", i), image, mask, oid, pose, K, bbox))
    return SceneManifest(list(objects), frames, convention, path.parent)


def manifest_to_json(m: SceneManifest) -> dict:
    frames = []
    for f in m.frames:
        s = m.scale(f.object_id)
        pose = Pose(f.pose.R, f.pose.t * s).to_json(m.convention)
        del pose["convention"]
        frames.append(
            {
                "id": f.frame_id,
                "image": f.image,
                "mask": f.mask,
                "object": f.object_id,
                "pose": pose,
                "intrinsics": f.K.to_json(),
                "bbox": f.bbox.to_list(),
            }
        )
    return {"convention": m.convention, "objects": m.objects, "frames": frames}


def save_manifest(m: SceneManifest, path) -> None:
    Path(path).write_text(json.dumps(manifest_to_json(m), indent=1))


# -- images -----------------------------------------------------------------


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def quantize(rgb: np.ndarray) -> np.ndarray:
    return np.round(255.0 * np.clip(rgb, 0.0, 1.0)).astype(np.uint8)


def write_image(path, rgb: np.ndarray) -> None:
    Image.fromarray(quantize(rgb)).save(path)


def write_mask(path, mask: np.ndarray) -> None:
    """8-bit mask; the format follows the extension (.png or .pgm)."""
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path)


# -- voxel features ---------------------------------------------------------


def save_feature(f: VoxelFeature, path, sidecar: dict | None = None) -> None:
    path = Path(path)
    header = FEATURE_MAGIC + struct.pack("<III", FORMAT_VERSION, f.S, f.C)
    payload = np.ascontiguousarray(f.values, dtype="<f4").tobytes()
    path.write_bytes(header + payload)
    meta = dict(f.meta)
    if sidecar:
        meta.update(sidecar)
    if meta:
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=1, default=str))


def load_feature(path) -> VoxelFeature:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16:
        raise TruncatedFile(f"{path}: header truncated")
    if raw[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, S, C = struct.unpack("<III", raw[4:16])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    n = S * S * S * C
    if len(raw) - 16 < 4 * n:
        raise TruncatedFile(f"{path}: expected {4 * n} payload bytes, found {len(raw) - 16}")
    values = np.frombuffer(raw, dtype="<f4", count=n, offset=16).reshape(S, S, S, C).astype(np.float32)
    meta = {}
    side = Path(str(path) + ".json")
    if side.exists():
        meta = json.loads(side.read_text())
    return VoxelFeature(values, meta)


# -- grid dumps -------------------------------------------------------------


def save_grid(g: RayGrid, path) -> None:
    H, W, N, _ = g.points.shape
    header = GRID_MAGIC + struct.pack("<7I", FORMAT_VERSION, H, W, N, STAGES.index(g.stage), 0, 0)
    Path(path).write_bytes(header + np.ascontiguousarray(g.points, dtype="<f4").tobytes())


def load_grid(path) -> RayGrid:
    raw = Path(path).read_bytes()
    if len(raw) < 32:
        raise TruncatedFile(f"{path}: header truncated")
    if raw[:4] != GRID_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, H, W, N, stage, _, _ = struct.unpack("<7I", raw[4:32])
    if version != FORMAT_VERSION or stage >= len(STAGES):
        raise FormatError(f"{path}: bad version or stage code")
    n = H * W * N * 3
    if len(raw) - 32 < 4 * n:
        raise TruncatedFile(f"{path}: payload truncated")
    pts = np.frombuffer(raw, dtype="<f4", count=n, offset=32).reshape(H, W, N, 3).astype(np.float32)
    return RayGrid(pts, STAGES[stage])


# -- predictions ------------------------------------------------------------


def load_predictions(path) -> dict:
    """Prediction file: JSON list of {"frame": id, "pose": pose fragment}."""
    try:
        items = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno}: {e.msg}") from e
    out = {}
    for i, it in enumerate(items):
        fid = _field(it, "frame", f"predictions[{i}]")
        out[str(fid)] = Pose.from_json(_field(it, "pose", f"predictions[{i}]"))
    return out


def save_predictions(preds: dict, path, convention: str = "neg_z_forward") -> None:
    items = [{"frame": k, "pose": p.to_json(convention)} for k, p in preds.items()]
    Path(path).write_text(json.dumps(items, indent=1))
