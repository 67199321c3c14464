"""File formats: byte-stable round trips, malformed-input reporting, and a
fuzz sweep that must never escape the AssetError contract."""

import warnings

import numpy as np
import pytest
from conftest import random_gaussians

from gsanim.assets_io import (
    atomic_write_bytes,
    load_camera,
    load_checkpoint,
    load_json,
    load_mesh_ply,
    load_model,
    load_obj,
    load_png,
    load_pose,
    load_rig,
    load_splat_ply,
    save_camera,
    save_checkpoint,
    save_json,
    save_loss_curve,
    save_mesh_ply,
    save_model,
    save_obj,
    save_png,
    save_pose,
    save_report_csv,
    save_rig,
    save_splat_ply,
    sha256_file,
)
from gsanim.body import Pose
from gsanim.errors import AssetError
from gsanim.mesh import Mesh
from gsanim.nnet.params import init_network_params, transfer_weights
from gsanim.render import Camera, four_view_rig


def flat_square():
    """Unit square in the z=0 plane. Every vertex, normal, and uv value is
    exactly representable in float32, so PLY round trips are byte-stable."""
    v = np.array([[0.0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
    return Mesh(v, np.array([[0, 1, 2], [0, 2, 3]]), uv=v[:, :2].copy())


def test_minimal_obj_worked_example(tmp_path):
    p = tmp_path / "tri.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    mesh = load_obj(p)
    assert mesh.vertex_count == 3 and mesh.face_count == 1
    assert np.array_equal(mesh.faces, [[0, 1, 2]])


def test_obj_round_trip_is_byte_stable(tmp_path, body0):
    _, template = body0
    a, b = tmp_path / "a.obj", tmp_path / "b.obj"
    save_obj(a, template)
    save_obj(b, load_obj(a))
    assert a.read_bytes() == b.read_bytes()


def test_obj_fan_triangulation_and_skipped_records(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text(
        "# comment\no thing\ns off\nusemtl none\n"
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"
    )
    mesh = load_obj(p)
    assert mesh.face_count == 2
    assert np.array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3]])


def test_obj_error_reporting(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
    with pytest.raises(AssetError) as e:
        load_obj(p)
    assert e.value.kind == "bounds"
    assert e.value.location == 4  # line number of the offending face
    p.write_text("v 0 0\n")
    with pytest.raises(AssetError) as e:
        load_obj(p)
    assert e.value.kind == "syntax" and e.value.location == 1


def test_splat_ply_round_trip_byte_identical(tmp_path):
    g = random_gaussians(1000, seed=0)
    a, b = tmp_path / "a.ply", tmp_path / "b.ply"
    save_splat_ply(a, g)
    save_splat_ply(b, load_splat_ply(a))
    assert a.read_bytes() == b.read_bytes()
    assert sha256_file(a) == sha256_file(b)
    loaded = load_splat_ply(a)
    assert np.max(np.abs(loaded.mu - g.mu)) < 1e-6  # f32 storage rounding


def test_truncated_ply_payload_reports_bounds(tmp_path):
    g = random_gaussians(5, seed=1)
    p = tmp_path / "t.ply"
    save_splat_ply(p, g)
    blob = p.read_bytes()
    p.write_bytes(blob[:-30])
    with pytest.raises(AssetError) as e:
        load_splat_ply(p)
    assert e.value.kind == "bounds"
    assert "declares 5 rows but payload holds 4" in e.value.message
    assert isinstance(e.value.location, int)  # byte offset of the break


def test_mesh_ply_values_survive_round_trip(tmp_path, body0):
    _, template = body0
    p = tmp_path / "m.ply"
    save_mesh_ply(p, template)
    loaded = load_mesh_ply(p)
    assert loaded.vertex_count == template.vertex_count
    assert np.array_equal(loaded.faces, template.faces)
    assert np.max(np.abs(loaded.vertices - template.vertices)) < 1e-6
    assert np.max(np.abs(loaded.uv - template.uv)) < 1e-6
    # normals are renormalized after f32 storage, so unit to full precision
    assert np.max(np.abs(np.linalg.norm(loaded.vertex_normals, axis=1) - 1.0)) < 1e-12


def test_mesh_ply_round_trip_byte_identical_on_exact_mesh(tmp_path):
    a, b = tmp_path / "a.ply", tmp_path / "b.ply"
    save_mesh_ply(a, flat_square())
    save_mesh_ply(b, load_mesh_ply(a))
    assert a.read_bytes() == b.read_bytes()


def test_checkpoint_round_trip_byte_identical(tmp_path):
    params = transfer_weights(init_network_params(3), "shared")
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, params)
    loaded = load_checkpoint(a)
    save_checkpoint(b, loaded)
    assert a.read_bytes() == b.read_bytes()
    assert loaded.mode == "shared"
    for back, fwd in loaded.share_map.items():
        assert loaded[back] is loaded[fwd], back
    for (na, ta), (nb, tb) in zip(params.named(), loaded.named()):
        assert na == nb
        assert np.array_equal(ta.data, tb.data)
        assert ta.requires_grad == tb.requires_grad


def test_independent_checkpoint_round_trip(tmp_path):
    params = init_network_params(7)
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, params)
    loaded = load_checkpoint(a)
    save_checkpoint(b, loaded)
    assert a.read_bytes() == b.read_bytes()
    assert loaded.mode == "independent"
    assert len(loaded.unique_tensors()) == len(params.unique_tensors())


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"GSCKxxxxyyyy")
    with pytest.raises(AssetError) as e:
        load_checkpoint(p)
    assert e.value.kind == "bounds"
    p.write_bytes(b"NOPE")
    with pytest.raises(AssetError) as e:
        load_checkpoint(p)
    assert e.value.kind == "syntax"


def test_png_round_trip(tmp_path):
    img = np.linspace(0.0, 1.0, 24 * 16 * 3).reshape(24, 16, 3)
    p = tmp_path / "x.png"
    save_png(p, img)
    back = load_png(p)
    assert back.shape == (24, 16, 3)
    assert np.max(np.abs(back - img)) <= 0.5 / 255.0 + 1e-9


def test_pose_camera_rig_json_round_trips(tmp_path, body0):
    model, _ = body0
    rng = np.random.default_rng(0)
    q = rng.normal(size=(model.skeleton.joint_count, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    pose = Pose(q, rng.normal(size=3))
    pp = tmp_path / "pose.json"
    save_pose(pp, pose)
    assert load_pose(pp).allequal(pose)

    cam = four_view_rig(1.0, 64)[2]
    cp = tmp_path / "cam.json"
    save_camera(cp, cam)
    back = load_camera(cp)
    assert back.width == cam.width and np.array_equal(back.extrinsic, cam.extrinsic)

    rp = tmp_path / "rig.json"
    save_rig(rp, four_view_rig(1.2, 128, center=(0.0, 0.9, 0.0)))
    rig = load_rig(rp)
    assert len(rig) == 4 and all(isinstance(c, Camera) for c in rig)

    shorthand = tmp_path / "rig2.json"
    save_json(shorthand, {"radius": 1.2, "resolution": 128, "center": [0.0, 0.9, 0.0]})
    rig2 = load_rig(shorthand)
    assert all(np.array_equal(a.extrinsic, b.extrinsic) for a, b in zip(rig, rig2))


def test_model_json_round_trip(tmp_path, body0):
    model, _ = body0
    p = tmp_path / "model.json"
    save_model(p, model)
    back = load_model(p)
    assert back.skeleton.joint_count == model.skeleton.joint_count
    assert np.array_equal(back.weights, model.weights)
    assert np.array_equal(back.template_mesh.vertices, model.template_mesh.vertices)
    assert np.array_equal(back.template_mesh.uv, model.template_mesh.uv)
    assert back.skeleton.canonical_pose.allequal(model.skeleton.canonical_pose)


def test_json_error_location(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"a": 1,}')
    with pytest.raises(AssetError) as e:
        load_json(p)
    assert e.value.kind == "syntax"
    assert e.value.location == 8  # character offset of the stray comma's close


def test_report_and_curve_files(tmp_path):
    rp = tmp_path / "report.csv"
    save_report_csv(rp, {"geometry": {"cd": 1.25}, "views": 4})
    lines = rp.read_text().strip().splitlines()
    assert lines[0] == "metric,value"
    assert "geometry.cd,1.25" in lines and "views,4" in lines
    cp = tmp_path / "curve.csv"
    save_loss_curve(cp, [(1, 0.5, 0.25, 0.75), (2, 0.4, 0.2, 0.6)])
    lines = cp.read_text().strip().splitlines()
    assert lines[0] == "step,mask_loss,color_loss,total"
    assert len(lines) == 3


def test_atomic_write_replaces_in_place(tmp_path):
    p = tmp_path / "out.bin"
    atomic_write_bytes(p, b"first")
    atomic_write_bytes(p, b"second")
    assert p.read_bytes() == b"second"
    with pytest.raises(AssetError) as e:
        atomic_write_bytes(tmp_path / "no" / "dir" / "x", b"payload")
    assert e.value.kind == "io"
    with pytest.raises(AssetError) as e:
        load_json(tmp_path / "missing.json")
    assert e.value.kind == "io"


LOADERS = (
    load_obj,
    load_mesh_ply,
    load_splat_ply,
    load_checkpoint,
    load_json,
    load_png,
    load_pose,
    load_camera,
    load_rig,
    load_model,
)


def _seed_corpus(tmp_path, body0):
    """Small valid files whose mutations exercise deep parser paths."""
    model, _ = body0
    rng = np.random.default_rng(5)
    seeds = []

    def emit(name, writer, *args):
        p = tmp_path / name
        writer(p, *args)
        return p.read_bytes()

    seeds.append(emit("s.ply", save_splat_ply, random_gaussians(8, seed=2)))
    seeds.append(emit("m.ply", save_mesh_ply, flat_square()))
    seeds.append(emit("t.obj", save_obj, flat_square()))
    seeds.append(emit("c.ckpt", save_checkpoint, init_network_params(0))[:600])
    seeds.append(emit("mdl.json", save_model, model)[:500])
    seeds.append(emit("img.png", save_png, rng.uniform(size=(6, 5, 3))))
    seeds.append(emit("cam.json", save_camera, four_view_rig(1.0, 32)[1]))
    seeds.append(emit("pose.json", save_pose, Pose.identity(model.skeleton.joint_count)))
    seeds.append(emit("rig.json", save_json, {"radius": 1.5, "resolution": 64}))
    return seeds


def test_fuzz_100k_parses_raise_only_asset_errors(tmp_path, body0):
    """10k adversarial blobs through all 10 loaders: anything other than a
    clean parse or an AssetError is a bug, no matter how mangled the file."""
    rng = np.random.default_rng(2024)
    seeds = _seed_corpus(tmp_path, body0)
    magics = [b"ply\n", b"GSCK", b"{", b"\x89PNG\r\n\x1a\n", b"v 0 0 0\n"]
    target = tmp_path / "fuzz.bin"
    parses = 0
    with warnings.catch_warnings():
        # garbage floats trip numpy RuntimeWarnings before validation rejects
        # them; the contract under test is about exceptions, not warnings
        warnings.simplefilter("ignore")
        for i in range(10_000):
            mode = i % 5
            if mode == 0:
                blob = rng.bytes(int(rng.integers(0, 200)))
            elif mode == 1:
                blob = magics[int(rng.integers(0, len(magics)))] + rng.bytes(int(rng.integers(0, 150)))
            elif mode == 2:
                base = bytearray(seeds[int(rng.integers(0, len(seeds)))])
                for _ in range(int(rng.integers(1, 8))):
                    base[int(rng.integers(0, len(base)))] = int(rng.integers(0, 256))
                blob = bytes(base)
            elif mode == 3:
                base = seeds[int(rng.integers(0, len(seeds)))]
                blob = base[: int(rng.integers(0, len(base)))]
            else:
                blob = bytes(rng.integers(32, 127, int(rng.integers(0, 120))).astype(np.uint8))
            target.write_bytes(blob)
            for loader in LOADERS:
                try:
                    loader(target)
                except AssetError:
                    pass
                parses += 1
    assert parses == 100_000
