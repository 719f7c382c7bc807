"""Seeded refinement benchmark on carved synthetic shapes.

For each shape, carve a feature from reference views, perturb held-out
ground-truth poses and refine them in image-matching and grid-matching mode.
Prints per-shape ADD success, rotation statistics and timing.

    python3 scripts/benchmark_refiner.py --shapes cube --trials 20 --texture octant
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from dprost.carving import carve, select_references
from dprost.metrics import add_metric
from dprost.pose import Pose, axis_angle_to_matrix, geodesic_distance
from dprost.projector import crop_image
from dprost.refiner import RefinerConfig, refine
from dprost.synth import TEXTURES, SyntheticShape, synth_scene


def perturb(rng, gt: Pose, max_deg: float, max_frac: float) -> Pose:
    d = rng.standard_normal(3)
    d /= np.linalg.norm(d)
    R = axis_angle_to_matrix(rng.standard_normal(3), np.radians(rng.uniform(0, max_deg))) @ gt.R
    return Pose(R, gt.t + d * rng.uniform(0, max_frac) * np.linalg.norm(gt.t))


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--shapes", nargs="+", default=["sphere", "cube", "box"])
    p.add_argument("--texture", choices=TEXTURES, default="gradient")
    p.add_argument("--trials", type=int, default=17)
    p.add_argument("--pool", type=int, default=64, help="training views to pick references from")
    p.add_argument("--refs", type=int, default=8)
    p.add_argument("--voxels", type=int, default=64)
    p.add_argument("--out-res", type=int, default=32)
    p.add_argument("--nz", type=int, default=32)
    p.add_argument("--inner", type=int, default=50)
    p.add_argument("--outer", type=int, default=2)
    p.add_argument("--max-deg", type=float, default=15.0)
    p.add_argument("--max-frac", type=float, default=0.1)
    p.add_argument("--dist", type=float, nargs=2, default=(3.0, 5.0))
    p.add_argument("--seed", type=int, default=60)
    p.add_argument("--skip-gm", action="store_true")
    args = p.parse_args()

    rng = np.random.default_rng(args.seed)
    im_cfg = RefinerConfig(mode="render_compare_im", out_res=args.out_res, n_z=args.nz, inner_steps=args.inner, outer_iters=args.outer)
    gm_cfg = RefinerConfig(mode="supervised_gm", out_res=args.out_res, n_z=args.nz, outer_iters=args.outer)
    for kind in args.shapes:
        shape = SyntheticShape(kind, texture=args.texture)
        _, obs = synth_scene(shape, args.pool + args.trials, image_size=128, seed=args.seed, dist_range=tuple(args.dist))
        feature = carve(select_references(obs[: args.pool], args.refs), args.voxels)
        pts = shape.surface_points(1024)
        add_ok = gm_ok = 0
        rot_before, rot_after = [], []
        start = time.perf_counter()
        for o in obs[args.pool :]:
            init = perturb(rng, o.pose, args.max_deg, args.max_frac)
            pose, _ = refine(init, crop_image(o.image, o.box, args.out_res), feature, o.K, o.box, im_cfg)
            add_ok += add_metric(pose, o.pose, pts) < 0.2
            rot_before.append(np.degrees(geodesic_distance(init.R, o.pose.R)))
            rot_after.append(np.degrees(geodesic_distance(pose.R, o.pose.R)))
            if not args.skip_gm:
                _, tr = refine(init, o.pose, None, o.K, o.box, gm_cfg)
                gm_ok += tr.final_objective < 1e-3
        n = args.trials
        rot_after = np.array(rot_after)
        line = (
            f"{kind:7s} IM ADD(0.1d) {add_ok}/{n}  rot {np.median(rot_before):.2f} -> {np.median(rot_after):.2f} deg (median), "
            f"under 5 deg {np.sum(rot_after < 5)}/{n}"
        )
        if not args.skip_gm:
            line += f"  GM<1e-3 {gm_ok}/{n}"
        print(f"{line}  [{time.perf_counter() - start:.1f}s]")


if __name__ == "__main__":
    main()
