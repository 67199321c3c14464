"""Command line interface: ``gsanim <command>``.

Commands
  canonicalize   posed scan -> canonical-pose scan
  template       canonical scan + texture -> Gaussian template PLY
  animate        template + target pose -> posed splats, optionally refined
  render         splats + camera -> color PNG (and optional mask PNG)
  train-refiner  deterministic synthetic curriculum -> checkpoint + loss CSV
  evaluate       splats vs ground truth -> metric report
  bench          stage timings as JSON on stdout

Every command that writes files also writes ``<first output>.manifest.json``
holding the command, resolved configuration, input digests, output paths,
seed, timing and tool version, via an atomic replace.

Failures print one machine-readable line ``error kind=<k> exit=<n>: <msg>``
to stderr followed by human detail. Exit codes: 0 ok, 2 usage, 3 asset,
4 numeric, 5 invariant.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, assets_io as aio, backend
from .avatar import (
    AvatarState,
    GaussianSet,
    animate,
    bind_gaussians,
    build_template,
    canonical_template_mesh,
    canonicalize_scan,
)
from .bench import TimingReport
from .body import Pose, Shape, forward_kinematics, regress_joints
from .errors import EXIT_OK, EXIT_USAGE, AssetError, GsanimError
from .mesh import Mesh
from .metrics import geometry_report, image_report
from .nnet import init_network_params, transfer_weights
from .refine import RefineConfig, RefineInput, pose_target_body, refine, train_refiner
from .render import four_view_rig, rasterize, rasterize_mesh_geometry
from .skinning import SkinningWeights, joint_delta_transforms, skin_points
from .synthetic import make_synthetic_body

TRAIN_DEFAULTS = {
    "seed": 0,
    "epochs": 5,
    "lr": 1e-3,
    "items": 2,
    "resolution": 64,
    "uv_resolution": 16,
    "delta_max": 0.02,
    "opacity_threshold": 0.0,
    "top_k": 0,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    args.argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args.func(args, time.perf_counter())
        return EXIT_OK
    except GsanimError as e:
        _report_error(e)
        return e.exit_code


class UsageError(GsanimError):
    """A flag combination the parser grammar cannot express."""

    exit_code = EXIT_USAGE


def _report_error(e):
    kind = {2: "usage", 3: "asset", 4: "numeric", 5: "invariant"}.get(e.exit_code, "internal")
    if isinstance(e, AssetError):
        kind = f"asset.{e.kind}"
    text = e.message if isinstance(e, AssetError) else str(e)
    first = text.splitlines()[0] if text else e.__class__.__name__
    print(f"error kind={kind} exit={e.exit_code}: {first}", file=sys.stderr)
    if isinstance(e, AssetError) and e.location is not None:
        print(f"  at: {e.location}", file=sys.stderr)
    if e.__cause__ is not None:
        print(f"  cause: {e.__cause__.__class__.__name__}: {e.__cause__}", file=sys.stderr)


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="deterministic run seed (default 0)")
    common.add_argument(
        "--threads", type=int, default=None,
        help="parallelism cap; falls back to GSANIM_THREADS, then logical cores",
    )

    p = argparse.ArgumentParser(prog="gsanim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"gsanim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("canonicalize", parents=[common], help="deform a posed scan into the canonical pose")
    sp.add_argument("--scan", required=True, help="posed scan mesh (.obj)")
    sp.add_argument("--model", required=True, help="body model (.json)")
    sp.add_argument("--pose", required=True, help="pose of the scan (.json)")
    sp.add_argument("--out", required=True, help="canonical mesh output (.obj)")
    sp.set_defaults(func=cmd_canonicalize)

    sp = sub.add_parser("template", parents=[common], help="build the canonical Gaussian template")
    sp.add_argument("--canon", required=True, help="canonical mesh (.obj)")
    sp.add_argument("--texture", required=True, help="albedo texture (.png)")
    sp.add_argument("--model", required=True, help="body model (.json)")
    sp.add_argument("--ckpt", required=True, help="network checkpoint (.bin)")
    sp.add_argument("--out", required=True, help="template splats output (.ply)")
    sp.add_argument("--uv-resolution", type=int, default=64, help="texel grid edge (default 64)")
    sp.set_defaults(func=cmd_template)

    sp = sub.add_parser("animate", parents=[common], help="re-pose the template")
    sp.add_argument("--template", required=True, help="canonical template splats (.ply)")
    sp.add_argument("--model", required=True, help="body model (.json)")
    sp.add_argument("--pose", required=True, help="target pose (.json)")
    sp.add_argument("--refine", action="store_true", help="run the learned refinement stage")
    sp.add_argument("--ckpt", help="network checkpoint, required with --refine")
    sp.add_argument("--out", required=True, help="posed splats output (.ply)")
    sp.add_argument("--refine-resolution", type=int, default=128, help="refinement view edge (default 128)")
    sp.set_defaults(func=cmd_animate)

    sp = sub.add_parser("render", parents=[common], help="render splats from one camera")
    sp.add_argument("--gaussians", required=True, help="splats (.ply)")
    sp.add_argument("--camera", required=True, help="camera (.json)")
    sp.add_argument("--out", required=True, help="color image output (.png)")
    sp.add_argument("--mask", help="optional coverage mask output (.png)")
    sp.add_argument("--background", default="0,0,0", help="background color r,g,b in [0,1]")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("train-refiner", parents=[common], help="train the refinement network")
    sp.add_argument("--config", required=True, help="training configuration (.json)")
    sp.add_argument("--out", required=True, help="checkpoint output (.bin)")
    sp.add_argument("--curve", required=True, help="loss curve output (.csv)")
    sp.add_argument("--epochs", type=int, default=None, help="override the configured epoch count")
    sp.add_argument("--lr", type=float, default=None, help="override the configured learning rate")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", parents=[common], help="geometry and image metrics against ground truth")
    sp.add_argument("--pred", required=True, help="predicted splats (.ply)")
    sp.add_argument("--truth", required=True, help="ground truth (.obj mesh or .ply)")
    sp.add_argument("--views", required=True, help="camera rig (.json)")
    sp.add_argument("--report", required=True, help="report output (.json or .csv)")
    sp.add_argument("--samples", type=int, default=20000, help="surface samples for mesh truth")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("bench", parents=[common], help="time pipeline stages")
    sp.add_argument("--stage", required=True, choices=("skin", "animate", "render", "pipeline"))
    sp.add_argument("--gaussians", type=int, default=10000, help="problem size (default 10000)")
    sp.add_argument("--iters", type=int, default=10, help="timed repetitions (default 10)")
    sp.add_argument("--resolution", type=int, default=256, help="render edge for the render stage")
    sp.add_argument("--warmup", type=int, default=2, help="untimed repetitions first")
    sp.add_argument("--out", help="optional report file (.json)")
    sp.set_defaults(func=cmd_bench)
    return p


def _seed(args):
    return 0 if args.seed is None else args.seed


def _finish(args, t0, inputs, outputs, config, extra=None):
    manifest = {
        "command": args.command,
        "argv": args.argv,
        "config": config,
        "inputs": {str(p): aio.sha256_file(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "seed": _seed(args),
        "threads": backend.thread_count(args.threads),
        "backend": backend.active_name(),
        "version": __version__,
        "timing": {"total_ms": (time.perf_counter() - t0) * 1000.0},
    }
    if extra:
        manifest.update(extra)
    aio.save_json(str(outputs[0]) + ".manifest.json", manifest)


def cmd_canonicalize(args, t0):
    scan = aio.load_obj(args.scan)
    model = aio.load_model(args.model)
    pose = aio.load_pose(args.pose)
    shape = Shape.zeros(model.shape_dim)
    canon = canonicalize_scan(scan, model, pose, shape)
    aio.save_obj(args.out, canon)
    _finish(args, t0, [args.scan, args.model, args.pose], [args.out],
            {"vertices": canon.vertex_count, "faces": canon.face_count})


def cmd_template(args, t0):
    canon = aio.load_obj(args.canon)
    texture = aio.load_png(args.texture)
    model = aio.load_model(args.model)
    params = aio.load_checkpoint(args.ckpt)
    g = build_template(canon, texture, model, params, uv_resolution=args.uv_resolution)
    aio.save_splat_ply(args.out, g)
    _finish(args, t0, [args.canon, args.texture, args.model, args.ckpt], [args.out],
            {"uv_resolution": args.uv_resolution, "gaussians": g.count})


def _body_rig(body, resolution):
    center = 0.5 * (body.vertices.min(axis=0) + body.vertices.max(axis=0))
    radius = float(np.max(np.linalg.norm(body.vertices - center, axis=1)))
    return four_view_rig(max(radius, 1e-3), resolution, center=center)


def cmd_animate(args, t0):
    if args.refine and not args.ckpt:
        raise UsageError("--refine requires --ckpt")
    g = aio.load_splat_ply(args.template)
    model = aio.load_model(args.model)
    pose = aio.load_pose(args.pose)
    shape = Shape.zeros(model.shape_dim)
    out = animate(g, model, shape, pose)
    inputs = [args.template, args.model, args.pose]
    config = {"refine": bool(args.refine)}
    if args.refine:
        params = aio.load_checkpoint(args.ckpt)
        body = pose_target_body(model, shape, pose)
        rin = RefineInput(
            AvatarState(out, pose, shape, "coarse_target"),
            body,
            _body_rig(body, args.refine_resolution),
        )
        out = refine(rin, params, threads=args.threads).refined.gaussians
        inputs.append(args.ckpt)
        config["refine_resolution"] = args.refine_resolution
    aio.save_splat_ply(args.out, out)
    _finish(args, t0, inputs, [args.out], {**config, "gaussians": out.count})


def _parse_background(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise AssetError("syntax", f"background wants r,g,b, got {text!r}")
    try:
        bg = tuple(float(x) for x in parts)
    except ValueError as e:
        raise AssetError("syntax", f"background wants numbers, got {text!r}") from e
    if any(not 0.0 <= v <= 1.0 for v in bg):
        raise AssetError("bounds", f"background components must lie in [0,1], got {text!r}")
    return bg


def cmd_render(args, t0):
    g = aio.load_splat_ply(args.gaussians)
    cam = aio.load_camera(args.camera)
    bg = _parse_background(args.background)
    out = rasterize(g, cam, background=bg, threads=args.threads)
    aio.save_png(args.out, out.color)
    outputs = [args.out]
    if args.mask:
        aio.save_png(args.mask, out.mask)
        outputs.append(args.mask)
    _finish(args, t0, [args.gaussians, args.camera], outputs,
            {"background": list(bg), "width": cam.width, "height": cam.height})


def _train_config(args):
    raw = aio.load_json(args.config)
    if not isinstance(raw, dict):
        raise AssetError("invariant", f"{args.config}: training config must be an object")
    unknown = sorted(set(raw) - set(TRAIN_DEFAULTS))
    if unknown:
        raise AssetError("invariant", f"{args.config}: unknown keys {unknown}")
    cfg = {**TRAIN_DEFAULTS, **raw}
    # flags win over the file
    if args.epochs is not None:
        cfg["epochs"] = args.epochs
    if args.lr is not None:
        cfg["lr"] = args.lr
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _training_dataset(cfg):
    """A fixed displaced-limb curriculum: each item pairs a coarse state
    posed short of the truth with renders of the truth, so the refiner
    must learn the residual."""
    model, _ = make_synthetic_body(cfg["seed"])
    shape = Shape.zeros(model.shape_dim)
    canon = canonical_template_mesh(model, shape)
    texture = np.full((64, 64, 3), 0.6)
    g0 = build_template(canon, texture, model, init_network_params(cfg["seed"]),
                        uv_resolution=cfg["uv_resolution"])
    # bend the most-covered non-root joint so the displacement is visible
    counts = np.bincount(np.argmax(model.weights, axis=1), minlength=model.weights.shape[1])
    counts[0] = -1
    joint = int(np.argmax(counts))
    dataset = []
    for i in range(cfg["items"]):
        base = 0.25 + 0.1 * i
        coarse_pose = _bend_pose(model, joint, base)
        truth_pose = _bend_pose(model, joint, base + 0.35)
        coarse_g = animate(g0, model, shape, coarse_pose)
        truth_g = animate(g0, model, shape, truth_pose)
        body = pose_target_body(model, shape, truth_pose)
        rig = _body_rig(body, cfg["resolution"])
        truth_views = [rasterize(truth_g, cam) for cam in rig]
        rin = RefineInput(AvatarState(coarse_g, coarse_pose, shape, "coarse_target"), body, rig)
        dataset.append((rin, truth_views))
    return dataset


def _bend_pose(model, joint, angle):
    j = model.skeleton.parent.shape[0]
    rot = np.zeros((j, 4))
    rot[:, 0] = 1.0
    rot[joint] = (np.cos(angle / 2.0), np.sin(angle / 2.0), 0.0, 0.0)
    return Pose(rot)


def cmd_train(args, t0):
    cfg = _train_config(args)
    dataset = _training_dataset(cfg)
    params = transfer_weights(init_network_params(cfg["seed"]), "finetune_backward")
    rcfg = RefineConfig(
        delta_max=cfg["delta_max"],
        opacity_threshold=cfg["opacity_threshold"],
        top_k=cfg["top_k"],
    )
    params, curve = train_refiner(
        dataset, params, epochs=cfg["epochs"], lr=cfg["lr"],
        cfg=rcfg, seed=cfg["seed"], threads=args.threads,
    )
    aio.save_checkpoint(args.out, params)
    aio.save_loss_curve(args.curve, curve)
    first, last = curve[0][3], curve[-1][3]
    _finish(args, t0, [args.config], [args.out, args.curve], cfg,
            {"steps": len(curve), "initial_loss": first, "final_loss": last})


def _load_truth(path):
    if str(path).lower().endswith(".obj"):
        return aio.load_obj(path)
    try:
        return aio.load_splat_ply(path)
    except AssetError:
        return aio.load_mesh_ply(path)


def cmd_evaluate(args, t0):
    pred = aio.load_splat_ply(args.pred)
    truth = _load_truth(args.truth)
    rig = aio.load_rig(args.views)
    geo = geometry_report(pred, truth, samples=args.samples, seed=_seed(args))
    psnrs, ssims = [], []
    for cam in rig:
        view = rasterize(pred, cam, threads=args.threads)
        if isinstance(truth, GaussianSet):
            ref = rasterize(truth, cam, threads=args.threads)
            rep = image_report(view.color, ref.color)
        else:
            _, silhouette = rasterize_mesh_geometry(truth, cam)
            rep = image_report(view.mask, silhouette)
        psnrs.append(rep.psnr_db)
        ssims.append(rep.ssim)
    report = {
        "geometry": geo.as_dict(),
        "image": {"psnr_db": float(np.mean(psnrs)), "ssim": float(np.mean(ssims))},
        "views": len(rig),
        "truth_kind": "splats" if isinstance(truth, GaussianSet) else "mesh",
    }
    if str(args.report).lower().endswith(".csv"):
        aio.save_report_csv(args.report, report)
    else:
        aio.save_report_json(args.report, report)
    _finish(args, t0, [args.pred, args.truth, args.views], [args.report],
            {"samples": args.samples}, extra={"report": report})


BENCH_SUBJECT_CENTER = (0.0, 0.9, 0.0)   # chest height of a standing body
BENCH_SUBJECT_RADIUS = 1.2


def _bench_cloud(n, seed):
    """A body-scale blob: centimetre splats spread over a torso-sized
    volume at standing height, viewed like an avatar capture rig would."""
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianSet(
        mu=rng.normal(scale=0.4, size=(n, 3)) + np.asarray(BENCH_SUBJECT_CENTER),
        raw_opacity=rng.normal(size=n),
        raw_scale=np.log(rng.uniform(0.005, 0.02, size=(n, 3))),
        rot=q,
        color=rng.uniform(size=(n, 3)),
    )


def cmd_bench(args, t0):
    seed = _seed(args)
    report = TimingReport(threads=args.threads)
    if args.stage == "skin":
        model, _ = make_synthetic_body(seed)
        shape = Shape.zeros(model.shape_dim)
        joints = regress_joints(model, shape)
        sk = model.skeleton
        pose = _bend_pose(model, 1, 0.3)
        delta = joint_delta_transforms(
            forward_kinematics(sk, joints, pose),
            forward_kinematics(sk, joints, sk.canonical_pose),
        )
        rng = np.random.default_rng(seed)
        j = sk.parent.shape[0]
        pts = rng.uniform(-1.0, 1.0, (args.gaussians, 3))
        w = rng.uniform(0.1, 1.0, (args.gaussians, 4))
        w /= w.sum(axis=1, keepdims=True)
        weights = SkinningWeights(rng.integers(0, j, (args.gaussians, 4)), w, j)
        report.run("skin", lambda: skin_points(pts, weights, delta),
                   warmup=args.warmup, iters=args.iters)
    elif args.stage == "animate":
        model, _ = make_synthetic_body(seed)
        shape = Shape.zeros(model.shape_dim)
        lo = model.template_mesh.vertices.min(axis=0)
        hi = model.template_mesh.vertices.max(axis=0)
        rng = np.random.default_rng(seed)
        g = _bench_cloud(args.gaussians, seed)
        g = GaussianSet(lo + (hi - lo) * rng.uniform(0.0, 1.0, (args.gaussians, 3)),
                        g.raw_opacity, g.raw_scale, g.rot, g.color)
        weights = bind_gaussians(g, model, shape)
        pose = _bend_pose(model, 1, 0.4)
        report.run("animate", lambda: animate(g, model, shape, pose, weights=weights),
                   warmup=args.warmup, iters=args.iters)
    elif args.stage == "render":
        g = _bench_cloud(args.gaussians, seed)
        rig = four_view_rig(BENCH_SUBJECT_RADIUS, args.resolution, center=BENCH_SUBJECT_CENTER)
        report.run(
            "render",
            lambda: [rasterize(g, cam, threads=args.threads) for cam in rig],
            warmup=args.warmup, iters=args.iters,
        )
    else:
        report.run("pipeline", lambda: _pipeline_once(seed, args.threads),
                   warmup=min(args.warmup, 1), iters=args.iters)
    payload = report.as_dict()
    payload["stage"] = args.stage
    payload["gaussians"] = args.gaussians
    payload["iters"] = args.iters
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out:
        aio.save_json(args.out, payload)
        _finish(args, t0, [], [args.out], {"stage": args.stage, "gaussians": args.gaussians})


def _pipeline_once(seed, threads):
    model, _ = make_synthetic_body(seed)
    shape = Shape.zeros(model.shape_dim)
    canon = canonical_template_mesh(model, shape)
    g = build_template(canon, np.full((32, 32, 3), 0.5), model,
                       init_network_params(seed), uv_resolution=16)
    pose = _bend_pose(model, 1, 0.3)
    posed = animate(g, model, shape, pose)
    body = pose_target_body(model, shape, pose)
    rig = _body_rig(body, 128)
    views = [rasterize(posed, cam, threads=threads) for cam in rig]
    geometry_report(posed, body, samples=4000, seed=seed)
    return views


if __name__ == "__main__":
    raise SystemExit(main())
