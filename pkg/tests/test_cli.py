"""Command line behavior through real subprocesses: exit codes, manifest
contents, byte-level identity guarantees, and the error-line contract."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

import gsanim.assets_io as aio
from gsanim import __version__
from gsanim.body import Pose, Shape
from gsanim.nnet import init_network_params
from gsanim.refine import pose_target_body
from gsanim.render import four_view_rig
from gsanim.synthetic import make_synthetic_body


def run_cli(*args, env_extra=None):
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        [sys.executable, "-m", "gsanim.cli"] + [str(a) for a in args],
        capture_output=True, text=True, env=env,
    )


def manifest_of(path):
    with open(f"{path}.manifest.json") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def assets(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    model, _ = make_synthetic_body(0)
    shape = Shape.zeros(model.shape_dim)
    joints = model.skeleton.parent.shape[0]

    def bend(joint, angle):
        rot = np.zeros((joints, 4))
        rot[:, 0] = 1.0
        rot[joint] = (np.cos(angle / 2.0), np.sin(angle / 2.0), 0.0, 0.0)
        return Pose(rot)

    scan_pose = bend(1, 0.35)
    target_pose = bend(1, 0.5)
    aio.save_model(d / "model.json", model)
    aio.save_pose(d / "scan_pose.json", scan_pose)
    aio.save_pose(d / "canon_pose.json", model.skeleton.canonical_pose)
    aio.save_pose(d / "target_pose.json", target_pose)
    aio.save_obj(d / "scan.obj", pose_target_body(model, shape, scan_pose))
    truth = pose_target_body(model, shape, target_pose)
    aio.save_obj(d / "truth.obj", truth)
    rng = np.random.default_rng(0)
    aio.save_png(d / "texture.png", np.clip(0.55 + 0.1 * rng.standard_normal((32, 32, 3)), 0, 1))
    aio.save_checkpoint(d / "weights.bin", init_network_params(0))
    center = 0.5 * (truth.vertices.min(axis=0) + truth.vertices.max(axis=0))
    radius = float(np.max(np.linalg.norm(truth.vertices - center, axis=1)))
    rig = four_view_rig(radius, 96, center=center)
    aio.save_camera(d / "camera.json", rig[0])
    aio.save_rig(d / "rig.json", rig)
    return d


@pytest.fixture(scope="session")
def built(assets):
    """canonicalize -> template -> animate, run once and shared."""
    d = assets
    r = run_cli("canonicalize", "--scan", d / "scan.obj", "--model", d / "model.json",
                "--pose", d / "scan_pose.json", "--out", d / "canon.obj")
    assert r.returncode == 0, r.stderr
    r = run_cli("template", "--canon", d / "canon.obj", "--texture", d / "texture.png",
                "--model", d / "model.json", "--ckpt", d / "weights.bin",
                "--out", d / "template.ply", "--uv-resolution", 16)
    assert r.returncode == 0, r.stderr
    r = run_cli("animate", "--template", d / "template.ply", "--model", d / "model.json",
                "--pose", d / "target_pose.json", "--out", d / "posed.ply")
    assert r.returncode == 0, r.stderr
    return d


def test_canonicalize_manifest_is_complete(built):
    d = built
    m = manifest_of(d / "canon.obj")
    assert m["command"] == "canonicalize"
    assert m["argv"][0] == "canonicalize" and str(d / "scan.obj") in m["argv"]
    assert m["outputs"] == [str(d / "canon.obj")]
    assert set(m["inputs"]) == {str(d / p) for p in ("scan.obj", "model.json", "scan_pose.json")}
    for path, digest in m["inputs"].items():
        assert digest == aio.sha256_file(path)
    assert m["seed"] == 0
    assert m["threads"] >= 1
    assert m["backend"] in ("compiled", "python")
    assert m["version"] == __version__
    assert m["timing"]["total_ms"] > 0.0
    assert m["config"]["vertices"] > 0 and m["config"]["faces"] > 0
    aio.load_obj(d / "canon.obj")  # output parses as a mesh


def test_template_output_parses(built):
    d = built
    g = aio.load_splat_ply(d / "template.ply")
    assert g.count > 0
    m = manifest_of(d / "template.ply")
    assert m["config"] == {"uv_resolution": 16, "gaussians": g.count}
    assert len(m["inputs"]) == 4


def test_animate_at_canonical_pose_is_bitwise_identity(built):
    d = built
    r = run_cli("animate", "--template", d / "template.ply", "--model", d / "model.json",
                "--pose", d / "canon_pose.json", "--out", d / "identity.ply")
    assert r.returncode == 0, r.stderr
    assert (d / "identity.ply").read_bytes() == (d / "template.ply").read_bytes()


def test_refine_with_zero_heads_matches_plain_animate(built):
    # the shipped checkpoint has zero-initialized refinement heads, so the
    # learned stage must be a no-op down to the output bytes
    d = built
    r = run_cli("animate", "--template", d / "template.ply", "--model", d / "model.json",
                "--pose", d / "target_pose.json", "--refine", "--ckpt", d / "weights.bin",
                "--refine-resolution", 64, "--out", d / "refined.ply")
    assert r.returncode == 0, r.stderr
    assert (d / "refined.ply").read_bytes() == (d / "posed.ply").read_bytes()
    m = manifest_of(d / "refined.ply")
    assert m["config"]["refine"] is True
    assert str(d / "weights.bin") in m["inputs"]


def test_render_writes_color_and_mask(built):
    d = built
    r = run_cli("render", "--gaussians", d / "posed.ply", "--camera", d / "camera.json",
                "--out", d / "view.png", "--mask", d / "mask.png", "--background", "0.2,0.2,0.2")
    assert r.returncode == 0, r.stderr
    assert aio.load_png(d / "view.png").shape == (96, 96, 3)
    mask = aio.load_png(d / "mask.png")
    assert mask.shape == (96, 96)
    assert mask.max() > 0.5  # the subject is actually in frame
    m = manifest_of(d / "view.png")
    assert m["outputs"] == [str(d / "view.png"), str(d / "mask.png")]
    assert m["config"]["background"] == [0.2, 0.2, 0.2]


def test_threads_env_var_lands_in_manifest(built):
    d = built
    r = run_cli("render", "--gaussians", d / "posed.ply", "--camera", d / "camera.json",
                "--out", d / "view_t.png", env_extra={"GSANIM_THREADS": "3"})
    assert r.returncode == 0, r.stderr
    assert manifest_of(d / "view_t.png")["threads"] == 3


def test_evaluate_against_itself_is_perfect(built):
    d = built
    r = run_cli("evaluate", "--pred", d / "template.ply", "--truth", d / "template.ply",
                "--views", d / "rig.json", "--report", d / "self.json")
    assert r.returncode == 0, r.stderr
    with open(d / "self.json") as fh:
        rep = json.load(fh)
    assert rep["truth_kind"] == "splats"
    assert rep["geometry"]["cd_p2s_cm"] == 0.0
    assert rep["geometry"]["cd_s2p_cm"] == 0.0
    assert rep["geometry"]["fscore"] == 100.0
    assert rep["geometry"]["nc"] == pytest.approx(1.0, abs=1e-9)
    assert rep["image"]["psnr_db"] == 99.0
    assert rep["image"]["ssim"] == 1.0
    assert rep["views"] == 4


def test_evaluate_mesh_truth_writes_csv(built):
    d = built
    r = run_cli("evaluate", "--pred", d / "posed.ply", "--truth", d / "truth.obj",
                "--views", d / "rig.json", "--report", d / "report.csv", "--samples", 4000)
    assert r.returncode == 0, r.stderr
    lines = (d / "report.csv").read_text().strip().splitlines()
    assert lines[0] == "metric,value"
    keys = {ln.split(",")[0] for ln in lines[1:]}
    assert {"geometry.cd_p2s_cm", "geometry.nc", "image.psnr_db", "truth_kind"} <= keys
    rep = manifest_of(d / "report.csv")["report"]
    assert rep["truth_kind"] == "mesh"
    assert 0.0 < rep["geometry"]["cd_p2s_cm"] < 10.0


def test_train_refiner_writes_checkpoint_and_curve(assets, tmp_path):
    d = assets
    cfg = {"items": 1, "epochs": 2, "resolution": 64, "uv_resolution": 8, "seed": 1}
    aio.save_json(tmp_path / "train.json", cfg)
    r = run_cli("train-refiner", "--config", tmp_path / "train.json",
                "--out", tmp_path / "trained.bin", "--curve", tmp_path / "curve.csv")
    assert r.returncode == 0, r.stderr
    params = aio.load_checkpoint(tmp_path / "trained.bin")
    assert params.mode == "finetune_backward"
    lines = (tmp_path / "curve.csv").read_text().strip().splitlines()
    assert lines[0] == "step,mask_loss,color_loss,total"
    assert len(lines) == 3  # header + items*epochs rows
    m = manifest_of(tmp_path / "trained.bin")
    assert m["config"]["epochs"] == 2 and m["config"]["seed"] == 1
    assert m["steps"] == 2
    assert np.isfinite(m["initial_loss"]) and np.isfinite(m["final_loss"])


def test_train_refiner_rejects_unknown_config_keys(tmp_path):
    aio.save_json(tmp_path / "bad.json", {"learning_rate": 1.0})
    r = run_cli("train-refiner", "--config", tmp_path / "bad.json",
                "--out", tmp_path / "x.bin", "--curve", tmp_path / "x.csv")
    assert r.returncode == 3
    assert "unknown keys ['learning_rate']" in r.stderr


def test_bench_prints_json_stats(assets):
    r = run_cli("bench", "--stage", "skin", "--gaussians", 2000, "--iters", 3, "--warmup", 1)
    assert r.returncode == 0, r.stderr
    payload = json.loads(r.stdout)
    assert payload["stage"] == "skin" and payload["gaussians"] == 2000
    stats = payload["stages"]["skin"]
    assert stats["iterations"] == 3
    assert 0.0 < stats["p50_ms"] <= stats["p95_ms"]
    env = payload["environment"]
    assert env["backend"] in ("compiled", "python") and env["numpy"]


def test_usage_errors_exit_2(assets):
    d = assets
    r = run_cli("animate", "--template", d / "model.json", "--model", d / "model.json",
                "--pose", d / "canon_pose.json", "--refine", "--out", d / "x.ply")
    assert r.returncode == 2
    assert r.stderr.splitlines()[0] == "error kind=usage exit=2: --refine requires --ckpt"
    r = run_cli("render", "--no-such-flag")
    assert r.returncode == 2  # argparse grammar rejection


def test_missing_and_corrupt_assets_exit_3(assets, tmp_path):
    d = assets
    r = run_cli("render", "--gaussians", tmp_path / "absent.ply",
                "--camera", d / "camera.json", "--out", tmp_path / "x.png")
    assert r.returncode == 3
    assert r.stderr.startswith("error kind=asset.io exit=3:")
    bad = tmp_path / "bad.ply"
    bad.write_bytes(b"this is not a ply file")
    r = run_cli("render", "--gaussians", bad, "--camera", d / "camera.json",
                "--out", tmp_path / "x.png")
    assert r.returncode == 3
    assert r.stderr.startswith("error kind=asset.syntax exit=3:")


def test_help_and_version():
    r = run_cli("--help")
    assert r.returncode == 0
    for word in ("canonicalize", "template", "animate", "render", "evaluate", "bench"):
        assert word in r.stdout
    r = run_cli("--version")
    assert r.returncode == 0
    assert r.stdout.strip() == f"gsanim {__version__}"
