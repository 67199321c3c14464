"""Rasterizer closed forms and ordering invariances."""

import numpy as np
import pytest

from gsanim import backend
from gsanim.avatar import GaussianSet, sigmoid
from gsanim.render import Camera, four_view_rig, rasterize, rasterize_backward

IDQ = (1.0, 0.0, 0.0, 0.0)


def axis_camera(size=64):
    # principal point on a pixel center so an on-axis Gaussian lands there exactly
    c = size / 2.0 + 0.5
    return Camera(100.0, 100.0, c, c, np.eye(4), size, size, 0.1, 100.0)


def on_axis_set(entries):
    """entries: list of (z, raw_opacity, color) placed on the optical axis."""
    n = len(entries)
    mu = np.array([(0.0, 0.0, z) for z, _, _ in entries])
    raw_op = np.array([o for _, o, _ in entries])
    color = np.array([c for _, _, c in entries])
    return GaussianSet(mu, raw_op, np.full((n, 3), np.log(0.01)), np.tile(IDQ, (n, 1)), color)


def test_single_gaussian_center_pixel_mask_equals_opacity():
    cam = axis_camera()
    row = col = int(cam.cy - 0.5)
    for raw in (-1.2, 0.0, 0.8):
        g = on_axis_set([(2.0, raw, (0.3, 0.6, 0.9))])
        out = rasterize(g, cam)
        alpha = sigmoid(np.float64(raw))
        assert abs(float(out.mask[row, col]) - alpha) <= 1e-6
        want = alpha * np.array([0.3, 0.6, 0.9])
        assert np.max(np.abs(out.color[row, col] - want)) <= 1e-6


def test_single_gaussian_background_blend():
    cam = axis_camera()
    row = col = int(cam.cy - 0.5)
    g = on_axis_set([(2.0, 0.4, (1.0, 0.0, 0.5))])
    bg = (0.2, 0.7, 0.1)
    out = rasterize(g, cam, background=bg)
    alpha = sigmoid(np.float64(0.4))
    want = alpha * np.array([1.0, 0.0, 0.5]) + (1.0 - alpha) * np.array(bg)
    assert np.max(np.abs(out.color[row, col] - want)) <= 1e-6


def test_two_gaussian_compositing_closed_form():
    cam = axis_camera()
    row = col = int(cam.cy - 0.5)
    c1, c2 = np.array([0.9, 0.2, 0.1]), np.array([0.1, 0.8, 0.3])
    g = on_axis_set([(2.0, 0.5, c1), (3.0, -0.3, c2)])
    bg = np.array([0.05, 0.05, 0.05])
    out = rasterize(g, cam, background=tuple(bg))
    a1 = sigmoid(np.float64(0.5))
    a2 = sigmoid(np.float64(-0.3))
    want_color = a1 * c1 + (1.0 - a1) * a2 * c2 + (1.0 - a1) * (1.0 - a2) * bg
    want_mask = 1.0 - (1.0 - a1) * (1.0 - a2)
    assert np.max(np.abs(out.color[row, col] - want_color)) <= 1e-6
    assert abs(float(out.mask[row, col]) - want_mask) <= 1e-6
    # swapping storage order must not change the composite: depth decides
    g_swapped = on_axis_set([(3.0, -0.3, c2), (2.0, 0.5, c1)])
    out2 = rasterize(g_swapped, cam)
    out1 = rasterize(g, cam)
    assert np.array_equal(out1.color, out2.color)


def distinct_depth_set(n, seed):
    rng = np.random.default_rng(seed)
    mu = rng.uniform(-0.3, 0.3, (n, 3))
    mu[:, 2] = np.linspace(1.5, 3.5, n) + rng.uniform(0.0, 0.005, n)
    assert len(np.unique(mu[:, 2])) == n
    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    return GaussianSet(
        mu,
        rng.uniform(-2.0, 2.0, n),
        np.log(rng.uniform(0.01, 0.05, (n, 3))),
        rot,
        rng.uniform(0.0, 1.0, (n, 3)),
    )


def permute(g, perm):
    return GaussianSet(g.mu[perm], g.raw_opacity[perm], g.raw_scale[perm], g.rot[perm], g.color[perm])


def test_input_permutation_is_bit_exact():
    cam = axis_camera(96)
    g = distinct_depth_set(200, 3)
    base = rasterize(g, cam, with_depth=True)
    for seed in range(3):
        perm = np.random.default_rng(seed).permutation(g.count)
        out = rasterize(permute(g, perm), cam, with_depth=True)
        assert np.array_equal(base.color, out.color)
        assert np.array_equal(base.mask, out.mask)
        assert np.array_equal(base.depth, out.depth)


def test_thread_count_is_bit_exact():
    cam = axis_camera(96)
    g = distinct_depth_set(300, 4)
    outs = [rasterize(g, cam, with_depth=True, threads=t) for t in (1, 2, 4)]
    for out in outs[1:]:
        assert np.array_equal(outs[0].color, out.color)
        assert np.array_equal(outs[0].mask, out.mask)
        assert np.array_equal(outs[0].depth, out.depth)


def test_backward_thread_count_is_bit_exact():
    cam = axis_camera(64)
    g = distinct_depth_set(150, 5)
    rng = np.random.default_rng(0)
    gc = rng.normal(size=(64, 64, 3))
    gm = rng.normal(size=(64, 64))
    grads = []
    for t in (1, 2, 4):
        out = rasterize(g, cam, retain_workspace=True, threads=t)
        grads.append(rasterize_backward(out, gc, gm, threads=t))
    for other in grads[1:]:
        for key in grads[0]:
            assert np.array_equal(grads[0][key], other[key]), key


def test_lanes_agree_on_render():
    cam = four_view_rig(0.8, 128)[0]
    g = distinct_depth_set(400, 6)
    g = GaussianSet(g.mu - (0.0, 0.0, 2.5), g.raw_opacity, g.raw_scale, g.rot, g.color)
    before = backend.active_name()
    try:
        backend.set_backend("python")
        a = rasterize(g, cam)
        backend.set_backend("compiled")
        b = rasterize(g, cam)
    finally:
        backend.set_backend(before)
    assert np.max(np.abs(a.color.astype(np.float64) - b.color.astype(np.float64))) < 1e-5
    assert np.max(np.abs(a.mask.astype(np.float64) - b.mask.astype(np.float64))) < 1e-5


def test_empty_scene_renders_background():
    cam = axis_camera(32)
    g = GaussianSet(
        np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3))
    )
    out = rasterize(g, cam, background=(0.25, 0.5, 0.75))
    assert np.array_equal(out.mask, np.zeros((32, 32), dtype=out.mask.dtype))
    assert np.allclose(out.color, (0.25, 0.5, 0.75))


def test_behind_camera_is_culled():
    cam = axis_camera(32)
    g = on_axis_set([(-1.0, 3.0, (1.0, 1.0, 1.0))])
    out = rasterize(g, cam)
    assert float(out.mask.max()) == 0.0


def test_depth_reads_far_plane_when_empty():
    cam = axis_camera(32)
    g = on_axis_set([(2.0, 5.0, (1.0, 1.0, 1.0))])
    out = rasterize(g, cam, with_depth=True)
    corner = float(out.depth[0, 0])
    assert corner == pytest.approx(cam.far)
    center = int(cam.cy - 0.5)
    assert abs(float(out.depth[center, center]) - 2.0) < 1e-3
