"""Refinement stage: exact identity at zero heads, bounded corrections,
and the prune/densify count law."""

import numpy as np
import pytest
from conftest import random_gaussians

from gsanim.avatar import AvatarState, GaussianSet, sigmoid
from gsanim.body import Pose
from gsanim.errors import InvariantError
from gsanim.nnet.params import init_network_params
from gsanim.refine import (
    RefineConfig,
    RefineInput,
    apply_corrections,
    pose_target_body,
    refine,
    train_refiner,
)
from gsanim.render import four_view_rig

RIG = four_view_rig(1.2, 64, center=(0.0, 0.9, 0.0))


def make_input(model, shape, n=20, seed=0):
    g = random_gaussians(n, seed=seed, center=(0.0, 0.95, 0.0), spread=0.2)
    pose = Pose.identity(model.skeleton.joint_count)
    state = AvatarState(g, pose, shape, "coarse_target")
    return RefineInput(state, pose_target_body(model, shape, pose), RIG)


def noisy_head_params(seed):
    params = init_network_params(seed)
    rng = np.random.default_rng(seed + 100)
    for name in ("refine_heads.l2.w", "refine_heads.l2.b"):
        t = params[name]
        t.data += (0.3 * rng.normal(size=t.shape)).astype(t.data.dtype)
    return params


def test_zero_heads_make_refine_an_exact_identity(body0, shape0):
    model, _ = body0
    rin = make_input(model, shape0)
    cfg = RefineConfig(opacity_threshold=0.0, top_k=0)
    out = refine(rin, init_network_params(5), cfg)
    g_in = rin.coarse.gaussians
    g_out = out.refined.gaussians
    for field in ("mu", "raw_opacity", "raw_scale", "rot", "color"):
        assert np.array_equal(getattr(g_out, field), getattr(g_in, field)), field
    for key, val in out.corrections.items():
        assert np.all(val == 0.0), key
    assert out.refined.stage == "refined_target"


def test_corrections_are_bounded_for_any_heads(body0, shape0):
    model, _ = body0
    for seed in range(3):
        rin = make_input(model, shape0, seed=seed)
        cfg = RefineConfig(delta_max=0.02, opacity_threshold=0.0, top_k=0)
        out = refine(rin, noisy_head_params(seed), cfg)
        c = out.corrections
        n = rin.coarse.gaussians.count
        assert c["d_mu"].shape == (n, 3)
        # the graph clamps in float32, so both bounds carry one f32 rounding
        assert np.max(np.linalg.norm(c["d_mu"], axis=1)) <= cfg.delta_max * (1.0 + 1e-5)
        assert np.max(np.abs(c["d_raw_scale"])) <= np.log(2.0) + 1e-7
        assert out.densify_scores.shape == (n,)
        rot = out.refined.gaussians.rot
        assert np.max(np.abs(np.linalg.norm(rot, axis=1) - 1.0)) < 1e-6


def test_refine_count_law(body0, shape0):
    model, _ = body0
    rin = make_input(model, shape0, n=30, seed=2)
    params = noisy_head_params(2)
    cfg = RefineConfig(opacity_threshold=0.4, top_k=3)
    out = refine(rin, params, cfg)
    refined_all = apply_corrections(rin.coarse.gaussians, out.corrections)
    pruned = int(np.sum(sigmoid(refined_all.raw_opacity) < cfg.opacity_threshold))
    assert out.refined.gaussians.count == 30 - pruned + cfg.top_k


def test_heads_change_the_output(body0, shape0):
    model, _ = body0
    rin = make_input(model, shape0, seed=3)
    cfg = RefineConfig(opacity_threshold=0.0, top_k=0)
    out = refine(rin, noisy_head_params(3), cfg)
    g_in = rin.coarse.gaussians
    g_out = out.refined.gaussians
    assert not np.array_equal(g_out.mu, g_in.mu)
    assert np.array_equal(g_out.color, g_in.color)  # color is never corrected here


def test_refine_input_validation(body0, shape0):
    model, _ = body0
    g = random_gaussians(5, seed=4, center=(0.0, 0.9, 0.0))
    pose = Pose.identity(model.skeleton.joint_count)
    body = pose_target_body(model, shape0, pose)
    canonical = AvatarState(g, pose, shape0, "canonical")
    with pytest.raises(InvariantError):
        RefineInput(canonical, body, RIG)
    coarse = AvatarState(g, pose, shape0, "coarse_target")
    with pytest.raises(InvariantError):
        RefineInput(coarse, body, RIG[:3])
    with pytest.raises(InvariantError):
        RefineInput(coarse, body, four_view_rig(1.2, 32, center=(0.0, 0.9, 0.0)))
    mixed = list(RIG[:3]) + [four_view_rig(1.2, 96, center=(0.0, 0.9, 0.0))[3]]
    with pytest.raises(InvariantError):
        RefineInput(coarse, body, mixed)
    with pytest.raises(InvariantError):
        RefineInput(coarse, "not a mesh", RIG)


def test_refine_config_validation():
    with pytest.raises(InvariantError):
        RefineConfig(delta_max=-0.1)
    with pytest.raises(InvariantError):
        RefineConfig(opacity_threshold=1.0)
    with pytest.raises(InvariantError):
        RefineConfig(top_k=-1)


def test_train_refiner_rejects_bad_arguments(body0, shape0):
    with pytest.raises(InvariantError):
        train_refiner([], init_network_params(0), epochs=1, lr=1e-3)
    model, _ = body0
    rin = make_input(model, shape0, n=5, seed=6)
    with pytest.raises(InvariantError):
        train_refiner([(rin, [])], init_network_params(0), epochs=1, lr=1e-3)


def test_pose_target_body_matches_canonical_surface(body0, shape0):
    model, template = body0
    pose = model.skeleton.canonical_pose
    posed = pose_target_body(model, shape0, pose)
    assert np.max(np.abs(posed.vertices - template.vertices)) < 1e-9
