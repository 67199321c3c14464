"""Autodiff ops against finite differences, parameter sharing, optimizer."""

import numpy as np
import pytest

from gsanim.errors import InvariantError, NumericError
from gsanim.nnet import ops
from gsanim.nnet.optim import Adam, optimizer_step
from gsanim.nnet.params import (
    BACKWARD_GROUPS,
    FORWARD_GROUPS,
    UNET_INTERIOR,
    NetworkParams,
    default_share_map,
    init_network_params,
    transfer_weights,
    zero_refine_heads,
)
from gsanim.nnet.tensor import Tensor, default_dtype, set_default_dtype
from gsanim.nnet.unet import FeatureMap, geo_encode, heads_forward, run_template_generator, unet_forward
from gsanim.render import Camera


@pytest.fixture(scope="module", autouse=True)
def f64_stack():
    saved = default_dtype()
    set_default_dtype(np.float64)
    yield
    set_default_dtype(saved)


def leaf(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def weighted(out, w):
    return ops.mean_(ops.mul(out, w))


# Each case builds leaves once and a graph factory; kink-prone ops keep
# their inputs clear of the nondifferentiable set by more than the FD step.
def _case_add(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    return [a, b], lambda: weighted(ops.add(a, b), w)


def _case_add_broadcast(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 4)
    w = rng.normal(size=(3, 4))
    return [a, b], lambda: weighted(ops.add(a, b), w)


def _case_sub(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    return [a, b], lambda: weighted(ops.sub(a, b), w)


def _case_mul(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    return [a, b], lambda: weighted(ops.mul(a, b), w)


def _case_div(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4, lo=0.5, hi=1.5)
    w = rng.normal(size=(3, 4))
    return [a, b], lambda: weighted(ops.div(a, b), w)


def _case_matmul(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 4, 5)
    w = rng.normal(size=(3, 5))
    return [a, b], lambda: weighted(ops.matmul(a, b), w)


def _case_relu(rng):
    signs = rng.choice((-1.0, 1.0), (3, 4))
    a = Tensor(signs * rng.uniform(0.1, 1.0, (3, 4)), requires_grad=True)
    w = rng.normal(size=(3, 4))
    return [a], lambda: weighted(ops.relu(a), w)


def _case_sigmoid(rng):
    a = leaf(rng, 3, 4, lo=-2.0, hi=2.0)
    w = rng.normal(size=(3, 4))
    return [a], lambda: weighted(ops.sigmoid(a), w)


def _case_tanh(rng):
    a = leaf(rng, 3, 4, lo=-2.0, hi=2.0)
    w = rng.normal(size=(3, 4))
    return [a], lambda: weighted(ops.tanh(a), w)


def _case_sqrt(rng):
    a = leaf(rng, 3, 4, lo=0.5, hi=2.0)
    w = rng.normal(size=(3, 4))
    return [a], lambda: weighted(ops.sqrt(a), w)


def _case_clamp(rng):
    vals = np.where(rng.random((3, 4)) < 0.5, rng.uniform(-0.4, 0.4, (3, 4)),
                    rng.choice((-1.0, 1.0), (3, 4)) * rng.uniform(0.6, 1.0, (3, 4)))
    a = Tensor(vals, requires_grad=True)
    w = rng.normal(size=(3, 4))
    return [a], lambda: weighted(ops.clamp(a, -0.5, 0.5), w)


def _case_reshape(rng):
    a = leaf(rng, 2, 6)
    w = rng.normal(size=(3, 4))
    return [a], lambda: weighted(ops.reshape(a, (3, 4)), w)


def _case_sum_axis(rng):
    a = leaf(rng, 3, 4)
    w = rng.normal(size=(3, 1))
    return [a], lambda: weighted(ops.sum_(a, axis=1, keepdims=True), w)


def _case_sum_all(rng):
    a = leaf(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    return [a], lambda: ops.sum_(ops.mul(a, w))


def _case_mean(rng):
    a = leaf(rng, 5, 2)
    w = rng.normal(size=(5, 2))
    return [a], lambda: weighted(a, w)


def _case_mse(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    return [a, b], lambda: ops.mse(a, b)


def _case_concat(rng):
    a, b = leaf(rng, 2, 3), leaf(rng, 2, 3)
    w = rng.normal(size=(2, 6))
    return [a, b], lambda: weighted(ops.concat([a, b], axis=1), w)


def _case_narrow(rng):
    a = leaf(rng, 3, 5)
    w = rng.normal(size=(3, 3))
    return [a], lambda: weighted(ops.narrow(a, 1, 1, 3), w)


def _case_pad(rng):
    a = leaf(rng, 2, 3, 3)
    w = rng.normal(size=(2, 5, 6))
    return [a], lambda: weighted(ops.pad_hw(a, 5, 6), w)


def _case_crop(rng):
    a = leaf(rng, 2, 5, 6)
    w = rng.normal(size=(2, 3, 3))
    return [a], lambda: weighted(ops.crop_hw(a, 3, 3), w)


def _case_conv(rng):
    x, w_, b = leaf(rng, 2, 5, 5), leaf(rng, 3, 2, 3, 3), leaf(rng, 3)
    w = rng.normal(size=(3, 5, 5))
    return [x, w_, b], lambda: weighted(ops.conv2d(x, w_, b), w)


def _case_conv_stride2(rng):
    x, w_, b = leaf(rng, 2, 6, 6), leaf(rng, 3, 2, 3, 3), leaf(rng, 3)
    w = rng.normal(size=(3, 3, 3))
    return [x, w_, b], lambda: weighted(ops.conv2d(x, w_, b, stride=2), w)


def _case_tconv(rng):
    x, w_, b = leaf(rng, 2, 3, 3), leaf(rng, 2, 3, 2, 2), leaf(rng, 3)
    w = rng.normal(size=(3, 6, 6))
    return [x, w_, b], lambda: weighted(ops.conv_transpose2d(x, w_, b), w)


def _case_bilinear(rng):
    feat = leaf(rng, 2, 6, 6)
    base = rng.integers(0, 5, (5, 2)).astype(np.float64)
    coords = Tensor(base + rng.uniform(0.2, 0.8, (5, 2)), requires_grad=True)
    w = rng.normal(size=(5, 2))
    return [feat, coords], lambda: weighted(ops.bilinear_sample(feat, coords), w)


def _case_bilinear_masked(rng):
    feat = leaf(rng, 2, 6, 6)
    coords = Tensor(rng.uniform(0.2, 4.8, (4, 2)), requires_grad=True)
    valid = np.array([True, False, True, True])
    w = rng.normal(size=(4, 2))
    return [feat, coords], lambda: weighted(ops.bilinear_sample(feat, coords, valid), w)


def _case_project(rng):
    mu = Tensor(
        np.stack(
            [rng.uniform(-0.3, 0.3, 6), rng.uniform(-0.3, 0.3, 6), rng.uniform(1.5, 3.0, 6)],
            axis=1,
        ),
        requires_grad=True,
    )
    cam = Camera(50.0, 50.0, 16.0, 16.0, np.eye(4), 32, 32, 0.1, 100.0)
    w = rng.normal(size=(6, 2))
    return [mu], lambda: weighted(ops.project_points(mu, cam)[0], w)


OP_CASES = {
    name[6:]: fn for name, fn in sorted(globals().items()) if name.startswith("_case_")
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradient_matches_fd(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    leaves, build = OP_CASES[name](rng)
    loss = build()
    loss.backward()
    h = 1e-6
    for t in leaves:
        count = min(4, t.size)
        for flat in rng.choice(t.size, size=count, replace=False):
            idx = np.unravel_index(int(flat), t.shape)
            saved = t.data[idx]
            t.data[idx] = saved + h
            up = build().data.item()
            t.data[idx] = saved - h
            down = build().data.item()
            t.data[idx] = saved
            fd = (up - down) / (2.0 * h)
            an = float(t.grad[idx])
            scale = max(abs(an), abs(fd), 1e-6)
            assert abs(an - fd) / scale < 1e-5, (name, idx, an, fd)


@pytest.mark.parametrize("size", [30, 31, 32, 33, 34])
def test_unet_preserves_spatial_size(size):
    params = init_network_params(0)
    x = FeatureMap(Tensor(np.random.default_rng(size).normal(size=(32, size, size))), "paired")
    out = unet_forward(params, "template_unet", x)
    assert out.spatial == (size, size)
    assert out.channels == 14


def test_template_head_zero_means_zero_output():
    params = init_network_params(4)
    rng = np.random.default_rng(0)
    out = run_template_generator(params, rng.uniform(0.0, 1.0, (16, 16, 3)), rng.normal(size=(16, 16, 6)))
    assert out.shape == (16, 16, 14)
    assert np.all(out == 0.0)


@pytest.mark.parametrize("size,expect", [(64, 16), (66, 17), (67, 17)])
def test_geo_encode_quarter_resolution(size, expect):
    params = init_network_params(0)
    rng = np.random.default_rng(1)
    fm = geo_encode(params, rng.uniform(size=(size, size, 3)), rng.uniform(size=(size, size)))
    assert fm.spatial == (expect, expect)
    assert fm.channels == 16


def test_feature_map_validation():
    with pytest.raises(InvariantError):
        FeatureMap(Tensor(np.zeros((3, 4, 4))), "mystery")
    with pytest.raises(InvariantError):
        FeatureMap(Tensor(np.zeros((4, 4))), "paired")
    with pytest.raises(InvariantError):
        unet_forward(init_network_params(0), "other_net", Tensor(np.zeros((32, 8, 8))))


def test_shared_transfer_aliases_interior_layers():
    params = transfer_weights(init_network_params(0), "shared")
    assert params.mode == "shared"
    share = default_share_map()
    assert len(share) == 2 * len(UNET_INTERIOR)
    for back, fwd in share.items():
        assert params[back] is params[fwd], back
    assert len(params.unique_tensors()) == len(params.named()) - len(share)


def test_finetune_backward_copies_then_freezes_forward():
    src = init_network_params(1)
    params = transfer_weights(src, "finetune_backward")
    for back, fwd in params.share_map.items():
        assert params[back] is not params[fwd]
        assert np.array_equal(params[back].data, params[fwd].data)
    for name, t in params.named():
        wants_grad = any(name.startswith(g + ".") for g in BACKWARD_GROUPS)
        assert t.requires_grad == wants_grad, name
    # source untouched
    for name, t in src.named():
        assert t.requires_grad

    forward_before = {
        n: t.data.copy() for n, t in params.named()
        if any(n.startswith(g + ".") for g in FORWARD_GROUPS)
    }
    rng = np.random.default_rng(0)
    # the zero-initialized head would block all gradients; randomize it
    params["refine_heads.l2.w"].data += rng.normal(size=params["refine_heads.l2.w"].shape)
    feats = Tensor(rng.normal(size=(6, 16)))
    target = Tensor(rng.normal(size=(6, 12)))
    opt = Adam(params, lr=1e-2)
    loss = ops.mse(heads_forward(params, feats), target)
    params.zero_grad()
    loss.backward()
    opt.step()
    for name, before in forward_before.items():
        assert np.array_equal(params[name].data, before), name
    assert not np.array_equal(params["refine_heads.l1.w"].data, src["refine_heads.l1.w"].data)


def test_transfer_rejects_unknown_mode():
    with pytest.raises(InvariantError):
        transfer_weights(init_network_params(0), "frozen")


def test_zero_refine_heads_zeroes_output():
    params = init_network_params(2)
    rng = np.random.default_rng(3)
    params["refine_heads.l2.w"].data += rng.normal(size=params["refine_heads.l2.w"].shape)
    zero_refine_heads(params)
    out = heads_forward(params, Tensor(rng.normal(size=(5, 16))))
    assert np.all(out.data == 0.0)


def adam_quadratic_run():
    x = Tensor(np.array([3.0]), requires_grad=True)
    opt = Adam([("x", x)], lr=0.1)
    for _ in range(200):
        opt.zero_grad()
        loss = ops.mul(x, x)
        loss.backward()
        opt.step()
    return float(x.data[0])


def test_adam_minimizes_quadratic_reproducibly():
    a = adam_quadratic_run()
    b = adam_quadratic_run()
    assert abs(a) < 1e-2
    assert a == b


def test_adam_rejects_non_finite_gradient():
    x = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([("x", x)])
    x.grad[:] = np.inf
    with pytest.raises(NumericError):
        opt.step()


def test_optimizer_step_functional():
    p = NetworkParams({"a.w": Tensor(np.ones(3), requires_grad=True)}, share_map={})
    state = optimizer_step(p, {"a.w": np.full(3, 2.0)}, lr=0.5)
    first = p["a.w"].data.copy()
    assert np.all(first < 1.0)
    state = optimizer_step(p, {"a.w": np.full(3, 2.0)}, lr=0.5, state=state)
    assert np.all(p["a.w"].data < first)
    assert state.t == 2


def test_network_params_api():
    params = init_network_params(0)
    names = [n for n, _ in params.named()]
    assert names == sorted(names)
    heads = params.group("refine_heads")
    assert set(heads) == {f"refine_heads.l{i}.{p}" for i in range(3) for p in "wb"}
    assert params.param_count() == sum(t.size for _, t in params.unique_tensors())
    with pytest.raises(InvariantError):
        params["refine_heads.l9.w"]
    dup = params.copy()
    dup["refine_heads.l0.w"].data[:] = 0.0
    assert not np.array_equal(params["refine_heads.l0.w"].data, dup["refine_heads.l0.w"].data)
    shared = transfer_weights(params, "shared")
    shared_copy = shared.copy()
    for back, fwd in shared_copy.share_map.items():
        assert shared_copy[back] is shared_copy[fwd]
    with pytest.raises(InvariantError):
        NetworkParams({"a.w": Tensor(np.zeros(1))}, share_map={"a.w": "missing.w"})
