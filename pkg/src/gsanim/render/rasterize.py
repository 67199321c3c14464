"""Tile-based splat rasterization: binning, forward compositing, and the
backward pass that drives training.

Compositing contract (shared verbatim by the compiled and numpy kernels):
Gaussians are depth-sorted front to back (stable tie-break on input index);
per pixel w_i = alpha_i * exp(-q_i / 2) with q the conic quadratic form,
contributions with q > Q_CUTOFF are skipped, each remaining contribution is
composited, and the loop stops once transmittance falls below TERM_EPS.
mask = 1 - T, color = sum_i c_i w_i T_i + T * background.
"""

from dataclasses import dataclass

import numpy as np

from .. import backend
from ..errors import InvariantError
from .project import project_backward, project_gaussians

TILE = 16
TERM_EPS = 1e-4
Q_CUTOFF = 50.0  # w < alpha * 2e-11 beyond this; identical in both kernels


@dataclass
class RasterWorkspace:
    """Everything the backward pass needs to replay the forward compositing."""

    gaussians: object
    camera: object
    background: np.ndarray
    dtype: object
    proj: dict
    order: np.ndarray        # indices into the full set, front to back
    means2d: np.ndarray      # sorted, culled, cast to dtype
    conic: np.ndarray
    alpha: np.ndarray
    color: np.ndarray
    tile_starts: np.ndarray
    tile_gauss: np.ndarray


@dataclass
class RenderOutput:
    color: np.ndarray          # (H, W, 3) in [0,1]
    mask: np.ndarray           # (H, W) accumulated alpha in [0,1]
    depth: np.ndarray = None   # (H, W) alpha-weighted mean depth, optional
    workspace: RasterWorkspace = None


def _bin_tiles(means2d, radius, width, height):
    """(tile_starts, tile_gauss): per tile, positions into the sorted arrays
    of every Gaussian whose 3-sigma box overlaps it, in front-to-back order."""
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    n_tiles = tiles_x * tiles_y
    if len(means2d) == 0:
        return np.zeros(n_tiles + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    x0 = np.clip(np.floor((means2d[:, 0] - radius) / TILE).astype(np.int64), 0, tiles_x - 1)
    x1 = np.clip(np.floor((means2d[:, 0] + radius) / TILE).astype(np.int64), 0, tiles_x - 1)
    y0 = np.clip(np.floor((means2d[:, 1] - radius) / TILE).astype(np.int64), 0, tiles_y - 1)
    y1 = np.clip(np.floor((means2d[:, 1] + radius) / TILE).astype(np.int64), 0, tiles_y - 1)
    outside = (
        (means2d[:, 0] + radius < 0)
        | (means2d[:, 0] - radius > width)
        | (means2d[:, 1] + radius < 0)
        | (means2d[:, 1] - radius > height)
    )
    nx = x1 - x0 + 1
    counts = np.where(outside, 0, nx * (y1 - y0 + 1))
    total = int(counts.sum())
    gauss_pos = np.repeat(np.arange(len(means2d)), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(total) - np.repeat(starts, counts)
    gnx = nx[gauss_pos]
    tx = x0[gauss_pos] + local % gnx
    ty = y0[gauss_pos] + local // gnx
    tile_ids = ty * tiles_x + tx
    order = np.lexsort((gauss_pos, tile_ids))
    tile_ids = tile_ids[order]
    tile_gauss = gauss_pos[order]
    tile_starts = np.zeros(n_tiles + 1, dtype=np.int64)
    np.add.at(tile_starts, tile_ids + 1, 1)
    np.cumsum(tile_starts, out=tile_starts)
    return tile_starts, tile_gauss


def _prepare(g, cam, dtype):
    proj = project_gaussians(g, cam, dtype=dtype)
    live = proj["valid"] & (proj["radius"] > 0.0)
    idx = np.nonzero(live)[0]
    # front-to-back on f64 depth, stable tie-break on original index
    order = idx[np.argsort(proj["depth"][idx], kind="stable")]
    means2d = np.ascontiguousarray(proj["mean2d"][order])
    conic = np.ascontiguousarray(proj["conic"][order])
    alpha = np.ascontiguousarray(proj["alpha"][order])
    color = np.ascontiguousarray(proj["color"][order])
    tile_starts, tile_gauss = _bin_tiles(
        means2d.astype(np.float64), proj["radius"][order], cam.width, cam.height
    )
    return proj, order, means2d, conic, alpha, color, tile_starts, tile_gauss


def rasterize(
    g,
    cam,
    background=(0.0, 0.0, 0.0),
    *,
    dtype=np.float32,
    with_depth=False,
    retain_workspace=False,
    threads=None,
):
    """Render a GaussianSet. See the module docstring for the compositing
    contract. ``retain_workspace`` keeps what rasterize_backward needs."""
    bg = np.asarray(background, dtype=dtype).reshape(3)
    proj, order, means2d, conic, alpha, color, tile_starts, tile_gauss = _prepare(g, cam, dtype)
    depth_sorted = np.ascontiguousarray(proj["depth"][order].astype(dtype))
    kern = backend.active()
    color_img, mask_img, depth_img = kern.raster_forward(
        means2d,
        conic,
        alpha,
        color,
        depth_sorted,
        tile_starts,
        tile_gauss,
        cam.width,
        cam.height,
        TILE,
        bg,
        float(TERM_EPS),
        with_depth,
        backend.thread_count(threads),
    )
    if with_depth:
        # alpha-weighted mean depth; empty pixels read as the far plane
        depth_img = np.where(mask_img > 1e-6, depth_img / np.maximum(mask_img, 1e-6), cam.far)
    ws = None
    if retain_workspace:
        ws = RasterWorkspace(
            gaussians=g, camera=cam, background=bg, dtype=dtype, proj=proj, order=order,
            means2d=means2d, conic=conic, alpha=alpha, color=color,
            tile_starts=tile_starts, tile_gauss=tile_gauss,
        )
    return RenderOutput(color=color_img, mask=mask_img, depth=depth_img if with_depth else None, workspace=ws)


def rasterize_backward(out, grad_color, grad_mask, threads=None):
    """Gradients of a scalar loss w.r.t. every Gaussian field, given image
    gradients. Requires the forward workspace; accumulation runs tile by
    tile in list order, so results are thread-count independent."""
    ws = out.workspace if isinstance(out, RenderOutput) else out
    if ws is None:
        raise InvariantError("rasterize_backward needs a retained workspace")
    dtype = ws.dtype
    grad_color = np.ascontiguousarray(np.asarray(grad_color, dtype=dtype).reshape(ws.camera.height, ws.camera.width, 3))
    grad_mask = np.ascontiguousarray(np.asarray(grad_mask, dtype=dtype).reshape(ws.camera.height, ws.camera.width))
    kern = backend.active()
    g_mean2d_s, g_conic_s, g_alpha_s, g_color_s = kern.raster_backward(
        ws.means2d,
        ws.conic,
        ws.alpha,
        ws.color,
        ws.tile_starts,
        ws.tile_gauss,
        ws.camera.width,
        ws.camera.height,
        TILE,
        ws.background,
        float(TERM_EPS),
        grad_color,
        grad_mask,
        backend.thread_count(threads),
    )
    n = ws.gaussians.count
    g_mean2d = np.zeros((n, 2))
    g_conic = np.zeros((n, 3))
    g_alpha = np.zeros(n)
    g_color = np.zeros((n, 3))
    g_mean2d[ws.order] = g_mean2d_s
    g_conic[ws.order] = g_conic_s
    g_alpha[ws.order] = g_alpha_s
    g_color[ws.order] = g_color_s
    return project_backward(ws.gaussians, ws.camera, ws.proj, g_mean2d, g_conic, g_alpha, g_color)


def normal_map_from_depth(depth, mask, cam):
    """Approximate camera-space normals from screen-space depth gradients.

    Returns an encoded (H,W,3) map: n_enc = ((n_x, -n_y, -n_z) + 1) / 2,
    the viewer-facing convention also used by the mesh rasterizer.
    Pixels with mask < 0.5 encode the zero normal (0.5 everywhere).
    """
    h, w = depth.shape
    d = np.asarray(depth, dtype=np.float64)
    dzdv, dzdu = np.gradient(d)
    ys, xs = np.mgrid[0:h, 0:w]
    x = (xs + 0.5 - cam.cx) / cam.fx
    y = (ys + 0.5 - cam.cy) / cam.fy
    # p = (x*z, y*z, z); tangents along u and v
    tu = np.stack([(d + x * dzdu * cam.fx) / cam.fx, y * dzdu, dzdu], axis=-1)
    tv = np.stack([x * dzdv, (d + y * dzdv * cam.fy) / cam.fy, dzdv], axis=-1)
    n = np.cross(tu, tv)
    # orient toward the viewer (negative z in camera space)
    flip = n[..., 2] > 0.0
    n[flip] *= -1.0
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    n = np.where(norm > 1e-12, n / np.maximum(norm, 1e-12), 0.0)
    enc = np.stack([n[..., 0], -n[..., 1], -n[..., 2]], axis=-1)
    enc = (enc + 1.0) / 2.0
    covered = np.asarray(mask) >= 0.5
    enc[~covered] = 0.5
    return enc.astype(np.float32)
