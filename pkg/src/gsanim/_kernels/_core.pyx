# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel lane: LBS point skinning and tile rasterization.

Twin of gsanim._kernels_py with identical semantics (see render.rasterize
for the compositing contract). Tiles are farmed out with OpenMP; forward
writes are disjoint per tile and the backward pass stages gradients in
per-(tile, slot) buffers merged in list order afterwards, so results are
bit-identical for every thread count.
"""

import numpy as np

from cython.parallel cimport prange
from libc.math cimport INFINITY, exp, expf, sqrt, sqrtf
from libc.stdlib cimport free, malloc

ctypedef fused floating:
    float
    double

cdef double Q_CUTOFF = 50.0  # must match gsanim._kernels_py.Q_CUTOFF


cdef inline void _skin_one(double[:, ::1] points, int[:, ::1] idx,
                           double[:, ::1] w, double[:, :, ::1] mats,
                           double[:, ::1] out, Py_ssize_t i) noexcept nogil:
    # blend the affine matrices first, then apply: matrix-space LBS
    cdef double m[12]
    cdef Py_ssize_t k, r, j
    cdef double wk, x, y, z
    for r in range(12):
        m[r] = 0.0
    for k in range(idx.shape[1]):
        wk = w[i, k]
        if wk == 0.0:
            continue
        j = idx[i, k]
        for r in range(3):
            m[4 * r + 0] += wk * mats[j, r, 0]
            m[4 * r + 1] += wk * mats[j, r, 1]
            m[4 * r + 2] += wk * mats[j, r, 2]
            m[4 * r + 3] += wk * mats[j, r, 3]
    x = points[i, 0]
    y = points[i, 1]
    z = points[i, 2]
    out[i, 0] = m[0] * x + m[1] * y + m[2] * z + m[3]
    out[i, 1] = m[4] * x + m[5] * y + m[6] * z + m[7]
    out[i, 2] = m[8] * x + m[9] * y + m[10] * z + m[11]


def skin_points(double[:, ::1] points, int[:, ::1] idx,
                double[:, ::1] w, double[:, :, ::1] mats):
    """x' = (sum_k w_k * M_idx(k)) x for (J,3,4) affine joint transforms."""
    cdef Py_ssize_t n = points.shape[0]
    out_arr = np.empty((n, 3), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i
    for i in prange(n, nogil=True, schedule="static"):
        _skin_one(points, idx, w, mats, out, i)
    return out_arr


def raster_forward(floating[:, ::1] means2d, floating[:, ::1] conic,
                   floating[::1] alpha, floating[:, ::1] color,
                   floating[::1] depth, long long[::1] tile_starts,
                   long long[::1] tile_gauss, int width, int height,
                   int tile, floating[::1] bg, double term_eps,
                   bint with_depth, int threads):
    cdef int tiles_x = (width + tile - 1) // tile
    cdef int tiles_y = (height + tile - 1) // tile
    cdef int n_tiles = tiles_x * tiles_y
    if floating is float:
        np_dtype = np.float32
    else:
        np_dtype = np.float64
    color_arr = np.zeros((height, width, 3), dtype=np_dtype)
    mask_arr = np.zeros((height, width), dtype=np_dtype)
    depth_arr = np.zeros((height, width), dtype=np_dtype)
    cdef floating[:, :, ::1] cimg = color_arr
    cdef floating[:, ::1] mimg = mask_arr
    cdef floating[:, ::1] dimg = depth_arr
    cdef floating eps = <floating> term_eps
    cdef int t, tx, ty, x0, x1, y0, y1, xx, yy, ch, tw, n_active, ylo, yhi, xlo, xhi, row
    cdef Py_ssize_t k, j, m, start, cnt, i
    cdef floating dx, dy, q, wgt, trans, contrib, ca, cb, cc, lmin
    cdef floating mx, my, al, c0, c1, c2, dp, r2, rr, rem, sx, lof, hif
    cdef floating* tbuf
    for t in prange(n_tiles, nogil=True, schedule="static", num_threads=threads):
        ty = t // tiles_x
        tx = t - ty * tiles_x
        x0 = tx * tile
        y0 = ty * tile
        x1 = min(x0 + tile, width)
        y1 = min(y0 + tile, height)
        tw = x1 - x0
        start = tile_starts[t]
        cnt = tile_starts[t + 1] - start
        n_active = tw * (y1 - y0)
        tbuf = <floating*> malloc(n_active * sizeof(floating))
        for i in range(n_active):
            tbuf[i] = 1
        # splat-outer over pixel-outer keeps per-splat state in registers;
        # per pixel the composite sequence is identical either way. Rows and
        # columns are clipped to a conservative center-distance bound that
        # implies q > Q_CUTOFF, so clipping never drops a contribution the
        # exact in-loop test would keep.
        for m in range(cnt):
            if n_active == 0:
                break
            j = tile_gauss[start + m]
            mx = means2d[j, 0]
            my = means2d[j, 1]
            ca = conic[j, 0]
            cb = conic[j, 1]
            cc = conic[j, 2]
            al = alpha[j]
            c0 = color[j, 0]
            c1 = color[j, 1]
            c2 = color[j, 2]
            dp = depth[j]
            if floating is float:
                lmin = <floating> 0.5 * (ca + cc) - sqrtf(<floating> 0.25 * (ca - cc) * (ca - cc) + cb * cb)
            else:
                lmin = 0.5 * (ca + cc) - sqrt(0.25 * (ca - cc) * (ca - cc) + cb * cb)
            if lmin > 0:
                r2 = <floating> 1.05 * <floating> Q_CUTOFF / lmin
                if floating is float:
                    rr = sqrtf(r2)
                else:
                    rr = sqrt(r2)
                # cast only in-range values: out-of-range float-to-int is UB
                lof = my - rr - <floating> 0.5
                hif = my + rr - <floating> 0.5
                ylo = y0 if lof < <floating> y0 else min(<int> lof - 1, y1 - 1)
                yhi = y1 - 1 if hif > <floating> (y1 - 1) else max(<int> hif + 1, y0)
            else:
                r2 = INFINITY
                ylo = y0
                yhi = y1 - 1
            for yy in range(ylo, yhi + 1):
                dy = <floating> yy + <floating> 0.5 - my
                rem = r2 - dy * dy
                if rem < 0:
                    continue
                if rem == INFINITY:
                    xlo = x0
                    xhi = x1 - 1
                else:
                    if floating is float:
                        sx = sqrtf(rem)
                    else:
                        sx = sqrt(rem)
                    lof = mx - sx - <floating> 0.5
                    hif = mx + sx - <floating> 0.5
                    xlo = x0 if lof < <floating> x0 else min(<int> lof - 1, x1 - 1)
                    xhi = x1 - 1 if hif > <floating> (x1 - 1) else max(<int> hif + 1, x0)
                row = (yy - y0) * tw - x0
                for xx in range(xlo, xhi + 1):
                    trans = tbuf[row + xx]
                    if trans < eps:
                        continue
                    dx = <floating> xx + <floating> 0.5 - mx
                    q = ca * dx * dx + 2 * cb * dx * dy + cc * dy * dy
                    if q > Q_CUTOFF:
                        continue
                    if floating is float:
                        wgt = al * expf(-q / 2)
                    else:
                        wgt = al * exp(-q / 2)
                    contrib = wgt * trans
                    cimg[yy, xx, 0] += c0 * contrib
                    cimg[yy, xx, 1] += c1 * contrib
                    cimg[yy, xx, 2] += c2 * contrib
                    if with_depth:
                        dimg[yy, xx] += dp * contrib
                    trans = trans * (1 - wgt)
                    tbuf[row + xx] = trans
                    if trans < eps:
                        n_active = n_active - 1
        for yy in range(y0, y1):
            row = (yy - y0) * tw - x0
            for xx in range(x0, x1):
                trans = tbuf[row + xx]
                for ch in range(3):
                    cimg[yy, xx, ch] = cimg[yy, xx, ch] + trans * bg[ch]
                mimg[yy, xx] = 1 - trans
        free(tbuf)
    return color_arr, mask_arr, depth_arr if with_depth else None


def raster_backward(floating[:, ::1] means2d, floating[:, ::1] conic,
                    floating[::1] alpha, floating[:, ::1] color,
                    long long[::1] tile_starts, long long[::1] tile_gauss,
                    int width, int height, int tile, floating[::1] bg,
                    double term_eps, floating[:, :, ::1] grad_color,
                    floating[:, ::1] grad_mask, int threads):
    cdef int tiles_x = (width + tile - 1) // tile
    cdef int tiles_y = (height + tile - 1) // tile
    cdef int n_tiles = tiles_x * tiles_y
    cdef Py_ssize_t n = means2d.shape[0]
    cdef Py_ssize_t n_slots = tile_gauss.shape[0]
    if floating is float:
        np_dtype = np.float32
    else:
        np_dtype = np.float64
    # per-(tile, slot) staging keeps accumulation order fixed regardless of
    # the thread count; the merge below runs sequentially in list order
    s_mean = np.zeros((n_slots, 2), dtype=np_dtype)
    s_conic = np.zeros((n_slots, 3), dtype=np_dtype)
    s_alpha = np.zeros(n_slots, dtype=np_dtype)
    s_color = np.zeros((n_slots, 3), dtype=np_dtype)
    cdef floating[:, ::1] sm = s_mean
    cdef floating[:, ::1] sc = s_conic
    cdef floating[::1] sa = s_alpha
    cdef floating[:, ::1] scol = s_color
    cdef floating eps = <floating> term_eps
    cdef int t, tx, ty, x0, x1, y0, y1, xx, yy, ch
    cdef Py_ssize_t k, j, start, cnt, m, slot
    cdef floating px, py, dx, dy, q, wgt, e, trans, g_w, g_q
    cdef floating b0, b1, b2, pm, a_c, b_c, c_c, gm
    cdef floating* wbuf
    cdef floating* ebuf
    cdef floating* tbuf
    for t in prange(n_tiles, nogil=True, schedule="static", num_threads=threads):
        start = tile_starts[t]
        cnt = tile_starts[t + 1] - start
        if cnt == 0:
            continue
        wbuf = <floating*> malloc(cnt * sizeof(floating))
        ebuf = <floating*> malloc(cnt * sizeof(floating))
        tbuf = <floating*> malloc(cnt * sizeof(floating))
        ty = t // tiles_x
        tx = t - ty * tiles_x
        x0 = tx * tile
        y0 = ty * tile
        x1 = min(x0 + tile, width)
        y1 = min(y0 + tile, height)
        for yy in range(y0, y1):
            py = <floating> yy + <floating> 0.5
            for xx in range(x0, x1):
                px = <floating> xx + <floating> 0.5
                trans = 1
                # forward replay; zeroed weights mark skipped contributions
                for m in range(cnt):
                    j = tile_gauss[start + m]
                    tbuf[m] = trans
                    wbuf[m] = 0
                    ebuf[m] = 0
                    if trans < eps:
                        continue
                    dx = px - means2d[j, 0]
                    dy = py - means2d[j, 1]
                    q = conic[j, 0] * dx * dx + 2 * conic[j, 1] * dx * dy + conic[j, 2] * dy * dy
                    if q > Q_CUTOFF:
                        continue
                    if floating is float:
                        e = expf(-q / 2)
                    else:
                        e = exp(-q / 2)
                    wgt = alpha[j] * e
                    wbuf[m] = wgt
                    ebuf[m] = e
                    trans = trans * (1 - wgt)
                # reverse sweep; b* carry the color already composited behind
                # the current splat, pm its leftover transmittance, so no
                # division by (1 - w) is ever needed
                b0 = 0
                b1 = 0
                b2 = 0
                pm = 1
                gm = grad_mask[yy, xx]
                for m in range(cnt - 1, -1, -1):
                    j = tile_gauss[start + m]
                    slot = start + m
                    wgt = wbuf[m]
                    e = ebuf[m]
                    dx = px - means2d[j, 0]
                    dy = py - means2d[j, 1]
                    a_c = conic[j, 0]
                    b_c = conic[j, 1]
                    c_c = conic[j, 2]
                    g_w = gm * pm
                    g_w = g_w + grad_color[yy, xx, 0] * (color[j, 0] - b0 - bg[0] * pm)
                    g_w = g_w + grad_color[yy, xx, 1] * (color[j, 1] - b1 - bg[1] * pm)
                    g_w = g_w + grad_color[yy, xx, 2] * (color[j, 2] - b2 - bg[2] * pm)
                    g_w = g_w * tbuf[m]
                    g_q = <floating> (-0.5) * wgt * g_w
                    for ch in range(3):
                        scol[slot, ch] += grad_color[yy, xx, ch] * wgt * tbuf[m]
                    sa[slot] += e * g_w
                    sc[slot, 0] += g_q * dx * dx
                    sc[slot, 1] += 2 * g_q * dx * dy
                    sc[slot, 2] += g_q * dy * dy
                    sm[slot, 0] -= g_q * (2 * a_c * dx + 2 * b_c * dy)
                    sm[slot, 1] -= g_q * (2 * b_c * dx + 2 * c_c * dy)
                    b0 = color[j, 0] * wgt + (1 - wgt) * b0
                    b1 = color[j, 1] * wgt + (1 - wgt) * b1
                    b2 = color[j, 2] * wgt + (1 - wgt) * b2
                    pm = (1 - wgt) * pm
        free(wbuf)
        free(ebuf)
        free(tbuf)
    g_mean_arr = np.zeros((n, 2), dtype=np_dtype)
    g_conic_arr = np.zeros((n, 3), dtype=np_dtype)
    g_alpha_arr = np.zeros(n, dtype=np_dtype)
    g_color_arr = np.zeros((n, 3), dtype=np_dtype)
    cdef floating[:, ::1] gmv = g_mean_arr
    cdef floating[:, ::1] gcv = g_conic_arr
    cdef floating[::1] gav = g_alpha_arr
    cdef floating[:, ::1] gcolv = g_color_arr
    cdef Py_ssize_t s
    for s in range(n_slots):
        j = tile_gauss[s]
        gmv[j, 0] += sm[s, 0]
        gmv[j, 1] += sm[s, 1]
        gcv[j, 0] += sc[s, 0]
        gcv[j, 1] += sc[s, 1]
        gcv[j, 2] += sc[s, 2]
        gav[j] += sa[s]
        gcolv[j, 0] += scol[s, 0]
        gcolv[j, 1] += scol[s, 1]
        gcolv[j, 2] += scol[s, 2]
    return g_mean_arr, g_conic_arr, g_alpha_arr, g_color_arr
