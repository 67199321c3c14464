"""Skinning oracles: identity laws, rigid roundtrips, binding invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsanim import backend
from gsanim.avatar import canonical_template_mesh, canonicalize_scan
from gsanim.body import Pose, Shape, forward_kinematics, regress_joints
from gsanim.errors import InvariantError
from gsanim.skinning import (
    SkinningWeights,
    bind_scan_to_model,
    compose_repose_transform,
    dqs_deform,
    joint_delta_transforms,
    lbs_deform,
    skin_points,
    transform_points,
)
from gsanim.synthetic import SyntheticConfig, make_synthetic_body


def bend_pose(joint_count, joint, angle, axis=(1.0, 0.0, 0.0)):
    rot = np.zeros((joint_count, 4))
    rot[:, 0] = 1.0
    ax = np.asarray(axis) / np.linalg.norm(axis)
    rot[joint] = (np.cos(angle / 2.0), *(np.sin(angle / 2.0) * ax))
    return Pose(rot)


def wiggle_pose(joint_count, seed, magnitude=0.4):
    rng = np.random.default_rng(seed)
    v = magnitude * rng.normal(size=(joint_count, 3))
    half = np.linalg.norm(v, axis=1) / 2.0
    axis = v / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-12)
    rot = np.concatenate([np.cos(half)[:, None], np.sin(half)[:, None] * axis], axis=1)
    return Pose(rot)


def fk(model, shape, pose):
    return forward_kinematics(model.skeleton, regress_joints(model, shape), pose)


def test_identity_pose_is_identity_deformation(body0, shape0):
    model, template = body0
    g = fk(model, shape0, model.skeleton.canonical_pose)
    delta = joint_delta_transforms(g, g)
    from gsanim.avatar import model_weights_sparse

    out = skin_points(template.vertices, model_weights_sparse(model), delta)
    assert np.max(np.abs(out - template.vertices)) <= 1e-12


def test_equal_poses_give_identity_matrices(body0, shape0):
    model, _ = body0
    for seed in range(5):
        g = fk(model, shape0, wiggle_pose(model.skeleton.joint_count, seed))
        delta = joint_delta_transforms(g, g)
        eye = np.eye(4)
        assert np.max(np.abs(delta.globals - eye)) <= 1e-12


def test_one_hot_canonicalize_repose_roundtrip():
    # rigid weights make every per-vertex transform exactly one joint's
    # rigid motion, so going to the canonical pose and back is lossless
    model, template = make_synthetic_body(3, SyntheticConfig(weight_mode="rigid"))
    shape = Shape.zeros(model.shape_dim)
    pose = bend_pose(model.skeleton.joint_count, 1, 0.6)
    from gsanim.avatar import model_weights_sparse

    weights = model_weights_sparse(model)
    g_s = fk(model, shape, pose)
    g_c = fk(model, shape, model.skeleton.canonical_pose)
    posed = lbs_deform(template, weights, joint_delta_transforms(g_s, g_c))
    canon = transform_points(posed.vertices, compose_repose_transform(weights, g_c, g_s).transforms)
    back = transform_points(canon, compose_repose_transform(weights, g_s, g_c).transforms)
    assert np.max(np.abs(back - posed.vertices)) <= 1e-6
    assert np.max(np.abs(canon - template.vertices)) <= 1e-6


def test_canonicalize_scan_roundtrip_on_rigid_body():
    model, _ = make_synthetic_body(4, SyntheticConfig(weight_mode="rigid"))
    shape = Shape.zeros(model.shape_dim)
    pose = bend_pose(model.skeleton.joint_count, 2, 0.5, axis=(0.0, 0.0, 1.0))
    from gsanim.avatar import model_weights_sparse

    scan = lbs_deform(
        model.template_mesh,
        model_weights_sparse(model),
        joint_delta_transforms(fk(model, shape, pose), fk(model, shape, model.skeleton.canonical_pose)),
    )
    canon = canonicalize_scan(scan, model, pose, shape)
    want = canonical_template_mesh(model, shape)
    assert np.max(np.abs(canon.vertices - want.vertices)) <= 1e-6


def test_binding_preserves_partition_of_unity(body0, shape0):
    model, _ = body0
    surface = canonical_template_mesh(model, shape0)
    rng = np.random.default_rng(7)
    queries = surface.vertices[rng.integers(0, surface.vertex_count, 500)]
    queries = queries + 0.01 * rng.normal(size=queries.shape)
    w = bind_scan_to_model(queries, model, surface)
    rows = w.weights.sum(axis=1)
    assert np.max(np.abs(rows - 1.0)) <= 1e-6
    assert w.weights.min() >= 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 64))
def test_binding_partition_of_unity_property(body0, shape0, seed, n):
    model, _ = body0
    surface = canonical_template_mesh(model, shape0)
    rng = np.random.default_rng(seed)
    lo, hi = surface.vertices.min(axis=0), surface.vertices.max(axis=0)
    queries = rng.uniform(lo - 0.2, hi + 0.2, (n, 3))
    w = bind_scan_to_model(queries, model, surface)
    assert np.max(np.abs(w.weights.sum(axis=1) - 1.0)) <= 1e-6


def test_lanes_agree_on_skin_points(body0, shape0):
    model, _ = body0
    rng = np.random.default_rng(11)
    n, j = 2000, model.skeleton.joint_count
    pts = rng.normal(size=(n, 3))
    w = rng.uniform(0.05, 1.0, (n, 4))
    w /= w.sum(axis=1, keepdims=True)
    weights = SkinningWeights(rng.integers(0, j, (n, 4)), w, j)
    delta = joint_delta_transforms(
        fk(model, shape0, wiggle_pose(j, 5)), fk(model, shape0, model.skeleton.canonical_pose)
    )
    before = backend.active_name()
    try:
        backend.set_backend("python")
        a = skin_points(pts, weights, delta)
        backend.set_backend("compiled")
        b = skin_points(pts, weights, delta)
    finally:
        backend.set_backend(before)
    assert np.array_equal(a, b) or np.max(np.abs(a - b)) < 1e-12


def test_dqs_matches_lbs_for_one_hot_weights(body0, shape0):
    model, template = body0
    j = model.skeleton.joint_count
    rng = np.random.default_rng(2)
    idx = rng.integers(0, j, (template.vertex_count, 1))
    weights = SkinningWeights(idx, np.ones((template.vertex_count, 1)), j)
    delta = joint_delta_transforms(
        fk(model, shape0, wiggle_pose(j, 9)), fk(model, shape0, model.skeleton.canonical_pose)
    )
    a = lbs_deform(template, weights, delta).vertices
    b = dqs_deform(template, weights, delta).vertices
    assert np.max(np.abs(a - b)) <= 1e-9


def test_weight_validation_rejects_bad_rows():
    with pytest.raises(InvariantError):
        SkinningWeights(np.zeros((2, 2), dtype=np.int32), np.full((2, 2), 0.6), 4)
    with pytest.raises(InvariantError):
        SkinningWeights(np.array([[5]], dtype=np.int32), np.ones((1, 1)), 4)
    with pytest.raises(InvariantError):
        SkinningWeights(np.zeros((1, 1), dtype=np.int32), np.array([[-0.1]]), 4)
