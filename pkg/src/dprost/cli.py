"""Command-line front end: synth, carve, render, refine, losses and eval.

Exit codes: 0 success, 1 usage error, 2 data error.  Results go to stdout as
JSON with --json, otherwise as a one-line summary.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .carving import carve, feature_points, select_references
from .dataset import (
    load_feature,
    load_manifest,
    load_predictions,
    read_image,
    read_mask,
    save_feature,
    save_grid,
    write_image,
)
from .errors import DProSTError, NonFiniteLoss
from .grid import form_grid, object_grid, push_grid, transform_grid
from .metrics import evaluate_pose, summarize
from .objectives import LossConfig, im_loss, pm_loss, total_loss
from .pose import OBJECT_DIAMETER, BoundingBox, CameraIntrinsics, Pose
from .projector import crop_image, project, render
from .refiner import MODES, RefinerConfig, initialize_from_box, refine
from .synth import KINDS, TEXTURES, SyntheticShape, synth_scene

log = logging.getLogger("dprost")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("DPROST_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"DPROST_THREADS must be an integer, got {env!r}")
    return 1


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1))


def _load_pose(path, scale: float = 1.0) -> Pose:
    """Pose file in source units; returned in normalised units."""
    p = Pose.from_json(_read_json(path))
    return Pose(p.R, p.t / scale)


def _pose_json(p: Pose, scale: float = 1.0) -> dict:
    return Pose(p.R, p.t * scale).to_json()


def _emit(args, result: dict, summary: str) -> None:
    if args.json:
        print(json.dumps(result, indent=1))
    else:
        print(summary)


def _feature_scale(feature) -> float:
    return float(feature.meta.get("d_real", OBJECT_DIAMETER)) / OBJECT_DIAMETER


# -- subcommands ------------------------------------------------------------


def cmd_synth(args) -> int:
    shape = SyntheticShape(args.shape.replace("-", " "), texture=args.texture, aspect=args.aspect)
    manifest, _ = synth_scene(shape, args.views, image_size=args.image_size, seed=args.seed, out_dir=args.output)
    path = Path(args.output) / "manifest.json"
    _emit(args, {"manifest": str(path), "frames": len(manifest.frames)}, f"wrote {len(manifest.frames)} views to {path}")
    return 0


def cmd_carve(args) -> int:
    manifest = load_manifest(args.manifest)
    oid = args.object or manifest.objects[0]["id"]
    frames = [f for f in manifest.frames if f.object_id == oid]
    obs = [manifest.observation(f) for f in frames]
    refs = select_references(obs, min(args.refs, len(obs)))
    feature = carve(refs, args.voxels, threads=_threads(args))
    side = {
        "manifest": str(Path(args.manifest).resolve()),
        "object": oid,
        "d_real": float(manifest.object_info(oid)["d_real"]),
    }
    save_feature(feature, args.output, side)
    result = {"feature": str(args.output), "S": feature.S, "references": feature.meta["references"]}
    _emit(args, result, f"carved {feature.S}^3 feature from {len(refs)} references -> {args.output}")
    return 0


def _full_frame(feature, pose: Pose, K: CameraIntrinsics, width: int, height: int, n_z: int):
    grid = transform_grid(push_grid(form_grid(K, width, height, n_z), float(np.linalg.norm(pose.t))), pose)
    return project(feature, grid), grid


def cmd_render(args) -> int:
    feature = load_feature(args.feature)
    manifest_path = args.manifest or feature.meta.get("manifest")
    if manifest_path is None:
        raise UsageError("render needs --manifest (the feature has no manifest sidecar)")
    manifest = load_manifest(manifest_path)
    frame = manifest.frame(args.frame)
    pose = _load_pose(args.pose, manifest.scale(frame.object_id)) if args.pose else frame.pose
    if args.crop:
        app = render(feature, pose, frame.K, frame.bbox, args.nz, args.out_res)
        grid = object_grid(frame.K, frame.bbox, pose, args.out_res, args.nz) if args.dump_grid else None
    else:
        w, h = _image_size(manifest.root / frame.image)
        app, grid = _full_frame(feature, pose, frame.K, w, h, args.nz)
    write_image(args.output, app.pixels)
    if args.dump_grid:
        save_grid(grid, args.dump_grid)
    result = {"output": str(args.output), "frame": frame.frame_id, "valid_pixels": int(app.valid_mask.sum())}
    _emit(args, result, f"rendered frame {frame.frame_id} -> {args.output}")
    return 0


def _image_size(path) -> tuple[int, int]:
    from PIL import Image

    with Image.open(path) as im:
        return im.size


def _box_from_args(args, mask) -> BoundingBox:
    if args.box is not None:
        return BoundingBox(*args.box)
    if mask is not None and mask.any():
        return BoundingBox.from_mask(mask)
    raise UsageError("refine needs --box or a non-empty --mask")


def cmd_refine(args) -> int:
    feature = load_feature(args.feature)
    scale = _feature_scale(feature)
    K = CameraIntrinsics.from_json(_read_json(args.intrinsics))
    image = read_image(args.image)
    mask = read_mask(args.mask) if args.mask else None
    if mask is not None:
        image = np.where(mask[..., None], image, 0.0)
    B = _box_from_args(args, mask)
    cfg = RefinerConfig(
        outer_iters=args.outer,
        inner_steps=args.inner,
        step_size=args.step_size,
        mode=args.mode,
        fd_step=args.fd_step,
        seed=args.seed,
        out_res=args.out_res,
        n_z=args.nz,
        lambda_gd=args.lambda_gd,
    )
    initial = _load_pose(args.init, scale) if args.init else initialize_from_box(B, K)
    if cfg.mode == "render_compare_im":
        target = crop_image(image, B, cfg.out_res)
        points = None
    else:
        if not args.target:
            raise UsageError(f"{cfg.mode} needs --target (ground-truth pose file)")
        target = _load_pose(args.target, scale)
        points = feature_points(feature, seed=args.seed)

    callback = None
    if args.renders:
        out = Path(args.renders)
        out.mkdir(parents=True, exist_ok=True)

        def callback(i, pose):
            write_image(out / f"iter{i + 1}.png", render(feature, pose, K, B, cfg.n_z, cfg.out_res).pixels)

        write_image(out / "iter0.png", render(feature, initial, K, B, cfg.n_z, cfg.out_res).pixels)
    try:
        pose, trace = refine(initial, target, feature, K, B, cfg, points=points, callback=callback)
    except NonFiniteLoss as e:
        if args.trace and e.trace is not None:
            _write_json(args.trace, e.trace.to_json())
        raise
    _write_json(args.output, _pose_json(pose, scale))
    if args.trace:
        _write_json(args.trace, trace.to_json())
    result = {
        "pose": _pose_json(pose, scale),
        "initial_objective": trace.initial_objective,
        "final_objective": trace.final_objective,
        "config": asdict(cfg),
    }
    _emit(args, result, f"objective {trace.initial_objective:.6g} -> {trace.final_objective:.6g}; pose -> {args.output}")
    return 0


def cmd_losses(args) -> int:
    scale = 1.0
    if args.manifest is not None:
        manifest = load_manifest(args.manifest)
        frame = manifest.frame(args.frame)
        scale = manifest.scale(frame.object_id)
        K, B, gt = frame.K, frame.bbox, frame.pose
    else:
        if not (args.intrinsics and args.box and args.gt):
            raise UsageError("losses needs --manifest/--frame or all of --gt, --intrinsics and --box")
        K = CameraIntrinsics.from_json(_read_json(args.intrinsics))
        B = BoundingBox(*args.box)
        gt = None
    if args.gt:
        gt = _load_pose(args.gt, scale)
    pred = _load_pose(args.pred, scale)
    cfg = LossConfig(out_res=args.out_res, n_z=args.nz, lambda_gd=args.lambda_gd)
    report = total_loss(pred, gt, K, B, cfg)
    extra = {}
    if args.points:
        extra["pm"] = pm_loss(pred, gt, np.loadtxt(args.points, ndmin=2))
    if args.feature and args.image:
        feature = load_feature(args.feature)
        target = crop_image(read_image(args.image), B, args.out_res)
        extra["im"] = im_loss(render(feature, pred, K, B, args.nz, args.out_res), target)
    report = type(report)(report.gm, report.gd, report.total, report.lambda_gd, **extra)
    _emit(args, report.to_json(), " ".join(f"{k}={v:.6g}" for k, v in report.to_json().items()))
    return 0


def _eval_points(manifest, oid: str, args) -> np.ndarray:
    if args.feature:
        return feature_points(load_feature(args.feature), seed=args.seed)
    info = manifest.object_info(oid)
    if "shape" not in info:
        raise UsageError(f"object {oid!r} has no analytic shape; pass --feature for evaluation points")
    return SyntheticShape(**{k: tuple(v) if isinstance(v, list) else v for k, v in info["shape"].items()}).surface_points(
        args.points, seed=args.seed
    )


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    preds = load_predictions(args.predictions)
    rows, reports_by_obj = [], {}
    for frame in manifest.frames:
        key = str(frame.frame_id)
        if key not in preds:
            continue
        oid = frame.object_id
        s = manifest.scale(oid)
        pred = Pose(preds[key].R, preds[key].t / s)
        if oid not in reports_by_obj:
            reports_by_obj[oid] = ([], _eval_points(manifest, oid, args))
        reports, points = reports_by_obj[oid]
        rep = evaluate_pose(pred, frame.pose, points, frame.K, s, args.thr)
        reports.append(rep)
        rows.append({"frame": frame.frame_id, "object": oid, **rep.to_json()})
    if not rows:
        raise DProSTError("no prediction matches a manifest frame")
    summary = {
        oid: summarize(reps, float(manifest.object_info(oid)["d_real"]), args.thr, args.auc_max)
        for oid, (reps, _) in reports_by_obj.items()
    }
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fields = ["frame", "object", "add", "add_s", "add_real", "add_s_real", "add_correct", "add_s_correct", "proj2d", "rot_err"]
            w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
            w.writeheader()
            w.writerows(rows)
    line = "; ".join(f"{oid}: ADD {s['add_accuracy']:.3f} ADD-S {s['add_s_accuracy']:.3f} AUC {s['auc_add_s']:.3f}" for oid, s in summary.items())
    _emit(args, summary, line)
    return 0


# -- parser -----------------------------------------------------------------


def _add_globals(p: argparse.ArgumentParser, default=None) -> None:
    def d(value):
        return value if default is None else default

    p.add_argument("--seed", type=int, default=d(0))
    p.add_argument("--out-res", type=int, default=d(128), help="RoI grid resolution")
    p.add_argument("--nz", type=int, default=d(64), help="samples per ray")
    p.add_argument("--voxels", type=int, default=d(128), help="voxel feature size S")
    p.add_argument("--refs", type=int, default=d(8), help="number of reference views")
    p.add_argument("--lambda-gd", type=float, default=d(1.0))
    p.add_argument("--threads", type=int, default=d(None), help="worker threads (default: $DPROST_THREADS or 1)")
    p.add_argument("--json", action="store_true", default=d(False), help="print the result as JSON")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dprost", description="Projective-grid pose refinement on space-carved voxel features.")
    _add_globals(p)
    # global flags are also accepted after the subcommand name
    common = argparse.ArgumentParser(add_help=False)
    _add_globals(common, argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="render a seeded synthetic scene")
    s.add_argument("--shape", choices=[k.replace(" ", "-") for k in KINDS], default="sphere")
    s.add_argument("--texture", choices=TEXTURES, default="uniform")
    s.add_argument("--aspect", type=float, default=3.0)
    s.add_argument("--views", type=int, default=8)
    s.add_argument("--image-size", type=int, default=128)
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("carve", parents=[common], help="space-carve a voxel feature from a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--object", default=None)
    s.add_argument("-o", "--output", required=True, help=".dpvf path")
    s.set_defaults(func=cmd_carve)

    s = sub.add_parser("render", parents=[common], help="render a feature at a frame's pose")
    s.add_argument("--feature", required=True)
    s.add_argument("--frame", required=True)
    s.add_argument("--manifest", default=None, help="defaults to the manifest recorded with the feature")
    s.add_argument("--pose", default=None, help="pose file overriding the frame's ground truth")
    s.add_argument("--crop", action="store_true", help="render the frame's RoI at --out-res instead of the full image")
    s.add_argument("--dump-grid", default=None, help="also write the object-space grid (.dprg)")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("refine", parents=[common], help="refine a pose against an observed image")
    s.add_argument("--feature", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--mask", default=None)
    s.add_argument("--box", type=float, nargs=4, metavar=("X", "Y", "W", "H"), default=None)
    s.add_argument("--intrinsics", required=True, help='JSON {"fx","fy","px","py"}')
    s.add_argument("--init", default=None, help="initial pose file (default: from the box)")
    s.add_argument("--target", default=None, help="ground-truth pose for the supervised modes")
    s.add_argument("--mode", choices=MODES, default="render_compare_im")
    s.add_argument("--outer", type=int, default=2)
    s.add_argument("--inner", type=int, default=100)
    s.add_argument("--step-size", type=float, default=0.01)
    s.add_argument("--fd-step", type=float, default=1e-2)
    s.add_argument("--trace", default=None, help="write the refinement trace JSON here")
    s.add_argument("--renders", default=None, help="directory for per-iteration renders")
    s.add_argument("-o", "--output", required=True, help="refined pose JSON")
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("losses", parents=[common], help="evaluate the grid, point and image objectives")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", default=None)
    s.add_argument("--manifest", default=None)
    s.add_argument("--frame", default=None)
    s.add_argument("--intrinsics", default=None)
    s.add_argument("--box", type=float, nargs=4, metavar=("X", "Y", "W", "H"), default=None)
    s.add_argument("--points", default=None, help="text file of object points for the PM loss")
    s.add_argument("--feature", default=None)
    s.add_argument("--image", default=None)
    s.set_defaults(func=cmd_losses)

    s = sub.add_parser("eval", parents=[common], help="score predictions against a manifest")
    s.add_argument("--predictions", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--feature", default=None, help="take evaluation points from the carved feature")
    s.add_argument("--points", type=int, default=2048, help="surface samples for analytic shapes")
    s.add_argument("--thr", type=float, default=0.1, help="threshold as a fraction of the diameter")
    s.add_argument("--auc-max", type=float, default=0.1, help="upper end of the ADD-S AUC range, in source units")
    s.add_argument("--csv", default=None)
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "losses" and args.manifest is not None and args.frame is None:
        parser.error("losses: --manifest needs --frame")
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"dprost: error: {e}", file=sys.stderr)
        return 1
    except (DProSTError, OSError, KeyError, ValueError, TypeError, json.JSONDecodeError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"dprost: {type(e).__name__}: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
