#!/usr/bin/env python3
"""Timing comparison of the compiled extension against the numpy lane.

Runs the skinning and rendering hot paths under both backends with the
same fixtures the ``gsanim bench`` command uses and prints a small table
with the speedup. Numerical agreement between the lanes is asserted to
1e-5 before any timing is reported.
"""

import argparse

import numpy as np

from gsanim import backend
from gsanim.bench import measure
from gsanim.cli import _bench_cloud, BENCH_SUBJECT_CENTER, BENCH_SUBJECT_RADIUS
from gsanim.render import four_view_rig, rasterize
from gsanim.skinning import SkinningWeights, skin_points
from gsanim.body import Shape, forward_kinematics, regress_joints
from gsanim.skinning import joint_delta_transforms
from gsanim.synthetic import make_synthetic_body


def skin_fixture(n, seed):
    model, _ = make_synthetic_body(seed)
    sk = model.skeleton
    joints = regress_joints(model, Shape.zeros(model.shape_dim))
    rot = np.zeros((sk.parent.shape[0], 4))
    rot[:, 0] = 1.0
    rot[1] = (np.cos(0.2), np.sin(0.2), 0.0, 0.0)
    from gsanim.body import Pose

    delta = joint_delta_transforms(
        forward_kinematics(sk, joints, Pose(rot)),
        forward_kinematics(sk, joints, sk.canonical_pose),
    )
    rng = np.random.default_rng(seed)
    j = sk.parent.shape[0]
    pts = rng.uniform(-1.0, 1.0, (n, 3))
    w = rng.uniform(0.1, 1.0, (n, 4))
    w /= w.sum(axis=1, keepdims=True)
    return pts, SkinningWeights(rng.integers(0, j, (n, 4)), w, j), delta


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=100_000, help="skinning problem size")
    ap.add_argument("--gaussians", type=int, default=10_000, help="render problem size")
    ap.add_argument("--resolution", type=int, default=256)
    ap.add_argument("--iters", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    pts, weights, delta = skin_fixture(args.points, args.seed)
    cloud = _bench_cloud(args.gaussians, args.seed)
    rig = four_view_rig(BENCH_SUBJECT_RADIUS, args.resolution, center=BENCH_SUBJECT_CENTER)

    results = {}
    checks = {}
    for lane in ("python", "compiled"):
        backend.set_backend(lane)
        if backend.active_name() != lane:
            print(f"{lane}: unavailable, skipped")
            continue
        checks[lane] = (
            skin_points(pts, weights, delta),
            rasterize(cloud, rig[0]).color,
        )
        results[lane] = {
            "skin": measure(lambda: skin_points(pts, weights, delta), warmup=1, iters=args.iters),
            "render": measure(lambda: [rasterize(cloud, cam) for cam in rig], warmup=1, iters=args.iters),
        }

    if len(checks) == 2:
        for got, want, what, tol in (
            (checks["compiled"][0], checks["python"][0], "skin", 1e-9),
            (checks["compiled"][1], checks["python"][1], "render", 1e-5),
        ):
            err = float(np.max(np.abs(got - want)))
            assert err < tol, f"{what}: lanes disagree by {err}"
            print(f"lane agreement ({what}): max abs diff {err:.3e}")

    names = {"skin": f"skin {args.points} pts", "render": f"render 4x{args.resolution}^2, {args.gaussians} splats"}
    print(f"\n{'stage':34s} {'python':>12s} {'compiled':>12s} {'speedup':>9s}")
    for key, label in names.items():
        py = results.get("python", {}).get(key)
        cc = results.get("compiled", {}).get(key)
        row = f"{label:34s}"
        row += f" {py['mean_ms']:10.2f}ms" if py else f" {'-':>12s}"
        row += f" {cc['mean_ms']:10.2f}ms" if cc else f" {'-':>12s}"
        if py and cc:
            row += f" {py['mean_ms'] / cc['mean_ms']:8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
