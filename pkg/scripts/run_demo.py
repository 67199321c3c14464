#!/usr/bin/env python3
"""End-to-end pipeline demo on the synthetic body.

Generates a posed scan, canonicalizes it, builds the Gaussian template,
re-poses it, renders it, and evaluates it against the posed body surface,
all through the ``gsanim`` command line. The resulting metric report is
compared against the committed reference in ``scripts/demo_report.json``;
pass ``--refresh`` to rewrite that reference instead.

Exits 0 when every step succeeds and the report matches the reference to
a 1e-6 relative tolerance (runs are deterministic per seed; the slack
only covers BLAS/libm variation across machines).
"""

import argparse
import json
import os
import shutil
import subprocess
import sys
import tempfile

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
REFERENCE = os.path.join(HERE, "demo_report.json")
SEED = 0


def gsanim(*args):
    exe = shutil.which("gsanim")
    cmd = [exe] if exe else [sys.executable, "-m", "gsanim.cli"]
    cmd += [str(a) for a in args]
    print("+", " ".join(cmd[-len(args):]))
    proc = subprocess.run(cmd)
    if proc.returncode != 0:
        raise SystemExit(f"step failed with exit code {proc.returncode}")


def make_assets(d):
    import gsanim.assets_io as aio
    from gsanim.body import Pose, Shape
    from gsanim.nnet import init_network_params
    from gsanim.refine import pose_target_body
    from gsanim.render import four_view_rig
    from gsanim.synthetic import make_synthetic_body

    model, _ = make_synthetic_body(SEED)
    shape = Shape.zeros(model.shape_dim)
    joints = model.skeleton.parent.shape[0]

    def bend(joint, angle):
        rot = np.zeros((joints, 4))
        rot[:, 0] = 1.0
        rot[joint] = (np.cos(angle / 2.0), np.sin(angle / 2.0), 0.0, 0.0)
        return Pose(rot)

    scan_pose = bend(1, 0.35)
    target_pose = bend(1, 0.5)
    aio.save_model(f"{d}/model.json", model)
    aio.save_pose(f"{d}/scan_pose.json", scan_pose)
    aio.save_pose(f"{d}/canon_pose.json", model.skeleton.canonical_pose)
    aio.save_pose(f"{d}/target_pose.json", target_pose)
    aio.save_obj(f"{d}/scan.obj", pose_target_body(model, shape, scan_pose))
    truth = pose_target_body(model, shape, target_pose)
    aio.save_obj(f"{d}/truth.obj", truth)

    rng = np.random.default_rng(SEED)
    aio.save_png(f"{d}/texture.png", np.clip(0.55 + 0.1 * rng.standard_normal((64, 64, 3)), 0, 1))
    aio.save_checkpoint(f"{d}/weights.bin", init_network_params(SEED))

    center = 0.5 * (truth.vertices.min(axis=0) + truth.vertices.max(axis=0))
    radius = float(np.max(np.linalg.norm(truth.vertices - center, axis=1)))
    rig = four_view_rig(radius, 128, center=center)
    aio.save_camera(f"{d}/camera.json", rig[0])
    aio.save_rig(f"{d}/rig.json", rig)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--refresh", action="store_true", help="rewrite the committed reference report")
    ap.add_argument("--keep", action="store_true", help="keep the working directory")
    args = ap.parse_args()

    d = tempfile.mkdtemp(prefix="gsanim-demo-")
    print("working directory:", d)
    make_assets(d)

    gsanim("canonicalize", "--scan", f"{d}/scan.obj", "--model", f"{d}/model.json",
           "--pose", f"{d}/scan_pose.json", "--out", f"{d}/canon.obj", "--seed", SEED)
    gsanim("template", "--canon", f"{d}/canon.obj", "--texture", f"{d}/texture.png",
           "--model", f"{d}/model.json", "--ckpt", f"{d}/weights.bin",
           "--out", f"{d}/template.ply", "--uv-resolution", 24, "--seed", SEED)

    # at the canonical pose, animate must reproduce the template bit for bit
    gsanim("animate", "--template", f"{d}/template.ply", "--model", f"{d}/model.json",
           "--pose", f"{d}/canon_pose.json", "--out", f"{d}/identity.ply", "--seed", SEED)
    with open(f"{d}/template.ply", "rb") as a, open(f"{d}/identity.ply", "rb") as b:
        if a.read() != b.read():
            raise SystemExit("canonical-pose animate is not bitwise identical to the template")
    print("canonical-pose identity: bitwise OK")

    gsanim("animate", "--template", f"{d}/template.ply", "--model", f"{d}/model.json",
           "--pose", f"{d}/target_pose.json", "--out", f"{d}/posed.ply", "--seed", SEED)
    gsanim("render", "--gaussians", f"{d}/posed.ply", "--camera", f"{d}/camera.json",
           "--out", f"{d}/view.png", "--mask", f"{d}/mask.png", "--seed", SEED)
    gsanim("evaluate", "--pred", f"{d}/posed.ply", "--truth", f"{d}/truth.obj",
           "--views", f"{d}/rig.json", "--report", f"{d}/report.json", "--seed", SEED)

    with open(f"{d}/report.json") as fh:
        report = json.load(fh)
    print(json.dumps(report, indent=2, sort_keys=True))

    if args.refresh:
        with open(REFERENCE, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print("reference rewritten:", REFERENCE)
    else:
        with open(REFERENCE) as fh:
            want = json.load(fh)
        bad = []
        for section in ("geometry", "image"):
            for key, expect in want[section].items():
                got = report[section][key]
                if abs(got - expect) > 1e-6 * max(1.0, abs(expect)):
                    bad.append(f"{section}.{key}: got {got}, want {expect}")
        if bad:
            raise SystemExit("report drifted from the reference:\n  " + "\n  ".join(bad))
        print("report matches the committed reference")

    if args.keep:
        print("kept:", d)
    else:
        shutil.rmtree(d)
    print("demo OK")


if __name__ == "__main__":
    main()
