"""Differentiable ops on Tensors.

Shapes follow the single-sample convention: feature maps are (C, H, W)
with no batch axis (the four-view set travels channel-stacked), dense
layers act on (N, F) matrices. All forwards are plain numpy expressions;
each op installs one backward closure that scatters into parent
gradients. Convolutions use the 9-shift formulation instead of im2col so
no large intermediate buffer is built.
"""

import numpy as np

from ..errors import InvariantError
from .tensor import Tensor, as_tensor


def _unbroadcast(grad, shape):
    # collapse numpy broadcasting: sum over added and stretched axes
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, parents=(a, b))

    def bw():
        a.accumulate(_unbroadcast(out.grad, a.shape))
        b.accumulate(_unbroadcast(out.grad, b.shape))

    out._backward = bw
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, parents=(a, b))

    def bw():
        a.accumulate(_unbroadcast(out.grad, a.shape))
        b.accumulate(_unbroadcast(-out.grad, b.shape))

    out._backward = bw
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, parents=(a, b))

    def bw():
        a.accumulate(_unbroadcast(out.grad * b.data, a.shape))
        b.accumulate(_unbroadcast(out.grad * a.data, b.shape))

    out._backward = bw
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, parents=(a, b))

    def bw():
        a.accumulate(_unbroadcast(out.grad / b.data, a.shape))
        b.accumulate(_unbroadcast(-out.grad * out.data / b.data, b.shape))

    out._backward = bw
    return out


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise InvariantError("matmul expects 2-d operands")
    out = Tensor(a.data @ b.data, parents=(a, b))

    def bw():
        a.accumulate(out.grad @ b.data.T)
        b.accumulate(a.data.T @ out.grad)

    out._backward = bw
    return out


def relu(x):
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0), parents=(x,))

    def bw():
        x.accumulate(out.grad * (x.data > 0.0))

    out._backward = bw
    return out


def sigmoid(x):
    x = as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s, parents=(x,))

    def bw():
        x.accumulate(out.grad * out.data * (1.0 - out.data))

    out._backward = bw
    return out


def tanh(x):
    x = as_tensor(x)
    out = Tensor(np.tanh(x.data), parents=(x,))

    def bw():
        x.accumulate(out.grad * (1.0 - out.data * out.data))

    out._backward = bw
    return out


def sqrt(x):
    x = as_tensor(x)
    r = np.sqrt(x.data)
    out = Tensor(r, parents=(x,))

    def bw():
        x.accumulate(out.grad * 0.5 / out.data)

    out._backward = bw
    return out


def clamp(x, lo, hi):
    """Pass-through gradient strictly inside [lo, hi], zero outside."""
    x = as_tensor(x)
    out = Tensor(np.clip(x.data, lo, hi), parents=(x,))

    def bw():
        x.accumulate(out.grad * ((x.data >= lo) & (x.data <= hi)))

    out._backward = bw
    return out


def reshape(x, shape):
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape), parents=(x,))

    def bw():
        x.accumulate(out.grad.reshape(x.shape))

    out._backward = bw
    return out


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), parents=(x,))

    def bw():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x.accumulate(np.broadcast_to(g, x.shape))

    out._backward = bw
    return out


def mean_(x):
    x = as_tensor(x)
    out = Tensor(np.asarray(x.data.mean()), parents=(x,))

    def bw():
        x.accumulate(np.broadcast_to(out.grad / x.size, x.shape))

    out._backward = bw
    return out


def mse(a, b):
    """Mean of squared differences over every element."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise InvariantError(f"mse shape mismatch {a.shape} vs {b.shape}")
    d = a.data - b.data
    out = Tensor(np.asarray(np.mean(d * d)), parents=(a, b))

    def bw():
        g = out.grad * 2.0 / d.size * d
        a.accumulate(g)
        b.accumulate(-g)

    out._backward = bw
    return out


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]

    def bw():
        splits = np.split(out.grad, np.cumsum(sizes)[:-1], axis=axis)
        for t, g in zip(tensors, splits):
            t.accumulate(g)

    out._backward = bw
    return out


def narrow(x, axis, start, length):
    """Contiguous slice along one axis."""
    x = as_tensor(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = Tensor(x.data[index], parents=(x,))

    def bw():
        if x.requires_grad:
            x.grad[index] += out.grad

    out._backward = bw
    return out


def pad_hw(x, target_h, target_w):
    """Zero-pad the last two axes at the bottom/right edges."""
    x = as_tensor(x)
    h, w = x.shape[-2], x.shape[-1]
    if target_h < h or target_w < w:
        raise InvariantError("pad_hw cannot shrink")
    widths = [(0, 0)] * (x.ndim - 2) + [(0, target_h - h), (0, target_w - w)]
    out = Tensor(np.pad(x.data, widths), parents=(x,))

    def bw():
        x.accumulate(out.grad[..., :h, :w])

    out._backward = bw
    return out


def crop_hw(x, target_h, target_w):
    """Keep the top-left target_h x target_w window of the last two axes."""
    x = as_tensor(x)
    h, w = x.shape[-2], x.shape[-1]
    if target_h > h or target_w > w:
        raise InvariantError("crop_hw cannot grow")
    out = Tensor(x.data[..., :target_h, :target_w], parents=(x,))

    def bw():
        if x.requires_grad:
            x.grad[..., :target_h, :target_w] += out.grad

    out._backward = bw
    return out


def conv2d(x, w, b, stride=1, padding=1):
    """3x3 (or kxk) convolution on a (C, H, W) map, cross-correlation order."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    cout, cin, kh, kw = w.shape
    if x.ndim != 3 or x.shape[0] != cin:
        raise InvariantError(f"conv2d input {x.shape} does not match kernel {w.shape}")
    h, wd = x.shape[1], x.shape[2]
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise InvariantError("conv2d output would be empty")

    def window(i, j):
        return xp[:, i : i + (oh - 1) * stride + 1 : stride, j : j + (ow - 1) * stride + 1 : stride]

    acc = np.zeros((cout, oh, ow), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            acc += np.tensordot(w.data[:, :, i, j], window(i, j), axes=(1, 0))
    acc += b.data[:, None, None]
    out = Tensor(acc, parents=(x, w, b))

    def bw():
        g = out.grad
        b.accumulate(g.sum(axis=(1, 2)))
        if w.requires_grad:
            for i in range(kh):
                for j in range(kw):
                    w.grad[:, :, i, j] += np.tensordot(g, window(i, j), axes=((1, 2), (1, 2)))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + (oh - 1) * stride + 1 : stride, j : j + (ow - 1) * stride + 1 : stride] += np.tensordot(
                        w.data[:, :, i, j], g, axes=(0, 0)
                    )
            x.grad += gxp[:, padding : padding + h, padding : padding + wd]

    out._backward = bw
    return out


def conv_transpose2d(x, w, b):
    """2x upsampling transposed convolution, kernel 2, stride 2, no overlap."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    cin, cout, kh, kw = w.shape
    if x.ndim != 3 or x.shape[0] != cin or (kh, kw) != (2, 2):
        raise InvariantError(f"conv_transpose2d input {x.shape} does not match kernel {w.shape}")
    h, wd = x.shape[1], x.shape[2]
    acc = np.empty((cout, 2 * h, 2 * wd), dtype=x.data.dtype)
    for di in range(2):
        for dj in range(2):
            acc[:, di::2, dj::2] = np.tensordot(w.data[:, :, di, dj], x.data, axes=(0, 0))
    acc += b.data[:, None, None]
    out = Tensor(acc, parents=(x, w, b))

    def bw():
        g = out.grad
        b.accumulate(g.sum(axis=(1, 2)))
        for di in range(2):
            for dj in range(2):
                gsub = g[:, di::2, dj::2]
                if w.requires_grad:
                    w.grad[:, :, di, dj] += np.tensordot(x.data, gsub, axes=((1, 2), (1, 2)))
                if x.requires_grad:
                    x.grad += np.tensordot(w.data[:, :, di, dj], gsub, axes=(1, 0))

    out._backward = bw
    return out


def bilinear_sample(feat, coords, valid=None):
    """Sample a (C, H, W) map at (N, 2) float pixel coords (x, y).

    Out-of-range corners read zero, so samples fade to the padding value
    across the border; gradients flow to both the map and the coordinates.
    Rows where valid is False produce exact zeros with zero gradient.
    """
    feat, coords = as_tensor(feat), as_tensor(coords)
    if feat.ndim != 3 or coords.ndim != 2 or coords.shape[1] != 2:
        raise InvariantError("bilinear_sample expects (C,H,W) features and (N,2) coords")
    c, hf, wf = feat.shape
    xc = coords.data[:, 0]
    yc = coords.data[:, 1]
    x0 = np.floor(xc)
    y0 = np.floor(yc)
    fx = xc - x0
    fy = yc - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    live = np.ones(len(xc), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    corners = []
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            inb = live & (xi >= 0) & (xi < wf) & (yi >= 0) & (yi < hf)
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            dwx = (1.0 if dx else -1.0) * (fy if dy else 1.0 - fy)
            dwy = (1.0 if dy else -1.0) * (fx if dx else 1.0 - fx)
            val = feat.data[:, yi.clip(0, hf - 1), xi.clip(0, wf - 1)].T * inb[:, None]
            corners.append((xi, yi, inb, wgt, dwx, dwy, val))

    acc = np.zeros((len(xc), c), dtype=feat.data.dtype)
    for _, _, _, wgt, _, _, val in corners:
        acc += wgt[:, None] * val
    out = Tensor(acc, parents=(feat, coords))

    def bw():
        g = out.grad
        if feat.requires_grad:
            buf = np.zeros((hf * wf, c), dtype=feat.grad.dtype)
            for xi, yi, inb, wgt, _, _, _ in corners:
                np.add.at(buf, (yi * wf + xi)[inb], (wgt[inb, None] * g[inb]))
            feat.grad += buf.T.reshape(c, hf, wf)
        if coords.requires_grad:
            gx = np.zeros(len(xc), dtype=coords.grad.dtype)
            gy = np.zeros(len(xc), dtype=coords.grad.dtype)
            for _, _, _, _, dwx, dwy, val in corners:
                dot = (g * val).sum(axis=1)
                gx += dwx * dot
                gy += dwy * dot
            coords.grad[:, 0] += gx
            coords.grad[:, 1] += gy

    out._backward = bw
    return out


def project_points(mu, cam):
    """Pinhole projection of (N, 3) world points to pixel coords.

    Returns (coords Tensor (N, 2), valid bool array); points at or behind
    the near plane are flagged invalid and projected with a unit depth so
    the forward value stays finite (their gradient is zeroed).
    """
    mu = as_tensor(mu)
    if mu.ndim != 2 or mu.shape[1] != 3:
        raise InvariantError("project_points expects (N,3) points")
    rot = np.asarray(cam.rotation, dtype=mu.data.dtype)
    t = np.asarray(cam.translation, dtype=mu.data.dtype)
    p = mu.data @ rot.T + t
    valid = p[:, 2] > cam.near
    zs = np.where(valid, p[:, 2], 1.0)
    u = cam.fx * p[:, 0] / zs + cam.cx
    v = cam.fy * p[:, 1] / zs + cam.cy
    out = Tensor(np.stack([u, v], axis=1), parents=(mu,))

    def bw():
        if not mu.requires_grad:
            return
        gu = out.grad[:, 0] * valid
        gv = out.grad[:, 1] * valid
        gp = np.empty_like(p)
        gp[:, 0] = gu * cam.fx / zs
        gp[:, 1] = gv * cam.fy / zs
        gp[:, 2] = -(gu * cam.fx * p[:, 0] + gv * cam.fy * p[:, 1]) / (zs * zs)
        mu.grad += gp @ rot

    out._backward = bw
    return out, valid
