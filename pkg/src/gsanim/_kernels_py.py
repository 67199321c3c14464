"""Pure numpy kernel lane: LBS point skinning and tile rasterization.

Drop-in twin of the compiled extension: same functions, same compositing
contract, selected by gsanim.backend when the extension is missing or the
caller forces it. ``threads`` is accepted for signature parity and ignored;
the tile loop runs serially, so this lane is trivially thread-independent.
"""

import numpy as np

Q_CUTOFF = 50.0  # must match the compiled lane and render.rasterize
_CHUNK = 128


def skin_points(points, idx, w, mats):
    """Blend (J,3,4) joint transforms per point: x' = (sum_k w_k M_idx(k)) x."""
    m = np.einsum("nk,nkab->nab", w, mats[idx])
    return np.einsum("nab,nb->na", m[:, :, :3], points) + m[:, :, 3]


def _exclusive_cumprod(a):
    out = np.empty_like(a)
    out[0] = 1.0
    np.cumprod(a[:-1], axis=0, out=out[1:])
    return out


def _tile_pixels(x0, x1, y0, y1, dtype):
    px = (np.arange(x0, x1) + 0.5).astype(dtype)
    py = (np.arange(y0, y1) + 0.5).astype(dtype)
    gx, gy = np.meshgrid(px, py)
    return gx.ravel(), gy.ravel()


def raster_forward(means2d, conic, alpha, color, depth, tile_starts, tile_gauss,
                   width, height, tile, bg, term_eps, with_depth, threads):
    """Front-to-back compositing over 16px tiles; see render.rasterize for
    the contract. Inputs are the depth-sorted per-Gaussian arrays plus the
    tile lists from binning. Returns (color, mask, depth|None) images."""
    dtype = means2d.dtype
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    color_img = np.zeros((height, width, 3), dtype=dtype)
    mask_img = np.zeros((height, width), dtype=dtype)
    depth_img = np.zeros((height, width), dtype=dtype) if with_depth else None
    for ty in range(tiles_y):
        y0, y1 = ty * tile, min(ty * tile + tile, height)
        for tx in range(tiles_x):
            x0, x1 = tx * tile, min(tx * tile + tile, width)
            lst = tile_gauss[tile_starts[ty * tiles_x + tx]:tile_starts[ty * tiles_x + tx + 1]]
            if len(lst) == 0:
                color_img[y0:y1, x0:x1] = bg
                continue
            gx, gy = _tile_pixels(x0, x1, y0, y1, dtype)
            t_cur = np.ones(gx.shape, dtype=dtype)
            acc = np.zeros((len(gx), 3), dtype=dtype)
            accd = np.zeros(len(gx), dtype=dtype) if with_depth else None
            for lo in range(0, len(lst), _CHUNK):
                if not np.any(t_cur >= term_eps):
                    break
                sel = lst[lo:lo + _CHUNK]
                dx = gx[None, :] - means2d[sel, 0, None]
                dy = gy[None, :] - means2d[sel, 1, None]
                ca, cb, cc = (conic[sel, i, None] for i in range(3))
                q = ca * dx * dx + 2 * cb * dx * dy + cc * dy * dy
                w = np.where(q <= Q_CUTOFF, alpha[sel, None] * np.exp(-q / 2), 0)
                # termination freezes T: zero the weights past the cutoff,
                # then rebuild transmittance from the effective weights
                keep = t_cur[None, :] * _exclusive_cumprod(1 - w) >= term_eps
                w_eff = np.where(keep, w, 0)
                t_before = t_cur[None, :] * _exclusive_cumprod(1 - w_eff)
                contrib = w_eff * t_before
                acc += contrib.T @ color[sel]
                if with_depth:
                    accd += contrib.T @ depth[sel]
                t_cur = t_before[-1] * (1 - w_eff[-1])
            color_img[y0:y1, x0:x1] = (acc + t_cur[:, None] * bg).reshape(y1 - y0, x1 - x0, 3)
            mask_img[y0:y1, x0:x1] = (1 - t_cur).reshape(y1 - y0, x1 - x0)
            if with_depth:
                depth_img[y0:y1, x0:x1] = accd.reshape(y1 - y0, x1 - x0)
    return color_img, mask_img, depth_img


def raster_backward(means2d, conic, alpha, color, tile_starts, tile_gauss,
                    width, height, tile, bg, term_eps, grad_color, grad_mask, threads):
    """Replay the forward compositing, then walk each tile list back to front
    with suffix accumulators (color-behind B, leftover transmittance Pm), so
    no division by (1 - w) is ever needed. Tiles accumulate in list order."""
    dtype = means2d.dtype
    n = len(means2d)
    g_mean2d = np.zeros((n, 2), dtype=dtype)
    g_conic = np.zeros((n, 3), dtype=dtype)
    g_alpha = np.zeros(n, dtype=dtype)
    g_color = np.zeros((n, 3), dtype=dtype)
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    for ty in range(tiles_y):
        y0, y1 = ty * tile, min(ty * tile + tile, height)
        for tx in range(tiles_x):
            x0, x1 = tx * tile, min(tx * tile + tile, width)
            lst = tile_gauss[tile_starts[ty * tiles_x + tx]:tile_starts[ty * tiles_x + tx + 1]]
            if len(lst) == 0:
                continue
            gx, gy = _tile_pixels(x0, x1, y0, y1, dtype)
            g_col_px = grad_color[y0:y1, x0:x1].reshape(-1, 3)
            g_msk_px = grad_mask[y0:y1, x0:x1].reshape(-1)
            dx = gx[None, :] - means2d[lst, 0, None]
            dy = gy[None, :] - means2d[lst, 1, None]
            ca, cb, cc = (conic[lst, i, None] for i in range(3))
            q = ca * dx * dx + 2 * cb * dx * dy + cc * dy * dy
            e = np.exp(-q / 2)
            w = np.where(q <= Q_CUTOFF, alpha[lst, None] * e, 0)
            keep = _exclusive_cumprod(1 - w) >= term_eps
            w_eff = np.where(keep, w, 0)
            t_before = _exclusive_cumprod(1 - w_eff)
            live = keep & (q <= Q_CUTOFF)
            behind = np.zeros((len(gx), 3), dtype=dtype)
            pm = np.ones(len(gx), dtype=dtype)
            for j in range(len(lst) - 1, -1, -1):
                wj = w_eff[j]
                g_w = (g_col_px * (color[lst[j]][None, :] - behind - pm[:, None] * bg[None, :])).sum(axis=1)
                g_w = np.where(live[j], (g_w + g_msk_px * pm) * t_before[j], 0)
                g_q = -0.5 * wj * g_w
                g_color[lst[j]] += (g_col_px * (wj * t_before[j])[:, None]).sum(axis=0)
                g_alpha[lst[j]] += (e[j] * g_w).sum()
                g_conic[lst[j], 0] += (g_q * dx[j] * dx[j]).sum()
                g_conic[lst[j], 1] += (2 * g_q * dx[j] * dy[j]).sum()
                g_conic[lst[j], 2] += (g_q * dy[j] * dy[j]).sum()
                g_mean2d[lst[j], 0] -= (g_q * (2 * ca[j, 0] * dx[j] + 2 * cb[j, 0] * dy[j])).sum()
                g_mean2d[lst[j], 1] -= (g_q * (2 * cb[j, 0] * dx[j] + 2 * cc[j, 0] * dy[j])).sum()
                behind = color[lst[j]][None, :] * wj[:, None] + (1 - wj)[:, None] * behind
                pm = (1 - wj) * pm
    return g_mean2d, g_conic, g_alpha, g_color
