"""Rendering objective: the raster bridge node and the multi-view loss.

splat_render injects the tile rasterizer into the autodiff graph as a
single fat node; its backward calls the rasterizer adjoint once and
scatters the result into the five Gaussian field tensors. multiview_loss
is the training objective: per view, mean-per-pixel squared error on the
coverage mask plus the same on color, summed over views.
"""

import numpy as np

from ..avatar import GaussianSet
from ..errors import InvariantError
from ..render import rasterize
from ..render.rasterize import rasterize_backward
from .ops import add, mse, narrow
from .tensor import Tensor, as_tensor, default_dtype

FIELD_KEYS = ("mu", "raw_scale", "rot", "raw_opacity", "color")


def splat_render(fields, cam, background=(0.0, 0.0, 0.0), threads=None):
    """Render Gaussian field tensors through one camera.

    fields maps the GaussianSet field names to Tensors. Returns an
    (H, W, 4) Tensor of RGB plus coverage mask; gradients reach every
    field through the rasterizer adjoint.
    """
    missing = [k for k in FIELD_KEYS if k not in fields]
    if missing:
        raise InvariantError(f"splat_render missing fields {missing}")
    fields = {k: as_tensor(fields[k]) for k in FIELD_KEYS}
    gset = GaussianSet(
        mu=fields["mu"].data,
        raw_opacity=fields["raw_opacity"].data,
        raw_scale=fields["raw_scale"].data,
        rot=fields["rot"].data,
        color=fields["color"].data,
    )
    out = rasterize(
        gset, cam, background=background,
        dtype=default_dtype(), retain_workspace=True, threads=threads,
    )
    stacked = np.concatenate([out.color, out.mask[..., None]], axis=2)
    node = Tensor(stacked, parents=tuple(fields[k] for k in FIELD_KEYS))
    ws = out.workspace

    def bw():
        g = node.grad
        grads = rasterize_backward(ws, g[..., :3], g[..., 3], threads=threads)
        for key in FIELD_KEYS:
            fields[key].accumulate(grads[key].astype(fields[key].data.dtype))

    node._backward = bw
    return node


def _view_pair(view):
    """Accept an (H, W, 4) Tensor or anything with color/mask attributes."""
    if isinstance(view, Tensor):
        if view.ndim != 3 or view.shape[2] != 4:
            raise InvariantError(f"rendered view tensors are (H,W,4), got {view.shape}")
        return narrow(view, 2, 0, 3), narrow(view, 2, 3, 1)
    color = as_tensor(np.asarray(view.color))
    mask = as_tensor(np.asarray(view.mask)[..., None])
    return color, mask


def multiview_loss(pred, truth):
    """Sum over views of (mask MSE + color MSE), each a per-pixel mean.

    Views may be (H, W, 4) graph tensors from splat_render or plain
    rendered outputs; the value is invariant to a consistent permutation
    of the view lists. Returns a scalar Tensor.
    """
    if len(pred) == 0 or len(pred) != len(truth):
        raise InvariantError(f"multiview_loss needs matching non-empty view lists, got {len(pred)}/{len(truth)}")
    total = None
    for p, t in zip(pred, truth):
        pc, pm = _view_pair(p)
        tc, tm = _view_pair(t)
        term = add(mse(pm, tm), mse(pc, tc))
        total = term if total is None else add(total, term)
    return total


def loss_terms(pred, truth):
    """(mask_loss, color_loss) floats for curve logging, same convention."""
    mask_loss = color_loss = 0.0
    for p, t in zip(pred, truth):
        pc, pm = _view_pair(p)
        tc, tm = _view_pair(t)
        mask_loss += float(np.mean((pm.data - tm.data) ** 2))
        color_loss += float(np.mean((pc.data - tc.data) ** 2))
    return mask_loss, color_loss
