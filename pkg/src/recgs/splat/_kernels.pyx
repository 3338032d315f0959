# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tile rasterizer: front-to-back compositing and its exact adjoint.

Forward walks every pixel of a tile through the tile's depth-sorted list.
A splat contributes when its Mahalanobis distance is within the cutoff, and
a pixel stops once its transmittance falls below ``t_min``.  Forward records
each pixel's contributors (list slot and Gaussian falloff) so backward can
sweep them back to front without recomputing exponentials or recovering
transmittance by division.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def record_layout(const cnp.int64_t[::1] tile_start, int height, int width, int tile):
    """Offsets of each tile's record block: list length times pixel count."""
    cdef Py_ssize_t ntx = (width + tile - 1) // tile
    cdef Py_ssize_t nty = (height + tile - 1) // tile
    off_np = np.zeros(ntx * nty + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] off = off_np
    cdef Py_ssize_t tx, ty, t, npx
    for ty in range(nty):
        for tx in range(ntx):
            t = ty * ntx + tx
            npx = (min((tx + 1) * tile, width) - tx * tile) * (min((ty + 1) * tile, height) - ty * tile)
            off[t + 1] = off[t] + (tile_start[t + 1] - tile_start[t]) * npx
    return off_np


def render_forward(int height, int width, int tile,
                   const cnp.int64_t[::1] tile_start, const cnp.int64_t[::1] tile_ids,
                   const double[:, ::1] means, const double[:, ::1] conics,
                   const double[::1] opac, const double[:, ::1] colors,
                   double cutoff, double t_min):
    """Composite all tiles; returns ``(image, transmittance, records)``."""
    cdef Py_ssize_t ntx = (width + tile - 1) // tile
    cdef Py_ssize_t nty = (height + tile - 1) // tile
    out_np = np.zeros((height, width, 3), dtype=np.float64)
    trans_np = np.ones((height, width), dtype=np.float64)
    off_np = record_layout(tile_start, height, width, tile)
    count_np = np.zeros((height, width), dtype=np.int32)
    slot_np = np.empty(max(off_np[-1], 1), dtype=np.int32)
    fall_np = np.empty(max(off_np[-1], 1), dtype=np.float64)
    cdef double[:, :, ::1] out = out_np
    cdef double[:, ::1] trans = trans_np
    cdef cnp.int64_t[::1] off = off_np
    cdef int[:, ::1] count = count_np
    cdef int[::1] slot = slot_np
    cdef double[::1] fall = fall_np
    cdef Py_ssize_t tx, ty, px, py, k, g, t, base, n, x0, y0, tw, k0
    cdef double T, dx, dy, q, alpha, gauss, r, gg, bb
    for ty in range(nty):
        for tx in range(ntx):
            t = ty * ntx + tx
            x0 = tx * tile
            y0 = ty * tile
            tw = min(x0 + tile, width) - x0
            k0 = tile_start[t]
            for py in range(y0, min(y0 + tile, height)):
                for px in range(x0, x0 + tw):
                    base = off[t] + ((py - y0) * tw + (px - x0)) * (tile_start[t + 1] - k0)
                    T = 1.0
                    r = 0.0
                    gg = 0.0
                    bb = 0.0
                    n = 0
                    for k in range(k0, tile_start[t + 1]):
                        if T < t_min:
                            break
                        g = tile_ids[k]
                        dx = px - means[g, 0]
                        dy = py - means[g, 1]
                        q = conics[g, 0] * dx * dx + 2.0 * conics[g, 1] * dx * dy + conics[g, 2] * dy * dy
                        if q > cutoff:
                            continue
                        gauss = exp(-0.5 * q)
                        alpha = opac[g] * gauss
                        slot[base + n] = <int>(k - k0)
                        fall[base + n] = gauss
                        n += 1
                        r += colors[g, 0] * alpha * T
                        gg += colors[g, 1] * alpha * T
                        bb += colors[g, 2] * alpha * T
                        T = T * (1.0 - alpha)
                    out[py, px, 0] = r
                    out[py, px, 1] = gg
                    out[py, px, 2] = bb
                    trans[py, px] = T
                    count[py, px] = <int>n
    return out_np, trans_np, (off_np, count_np, slot_np, fall_np)


def render_backward(int height, int width, int tile,
                    const cnp.int64_t[::1] tile_start, const cnp.int64_t[::1] tile_ids,
                    const double[:, ::1] means, const double[:, ::1] conics,
                    const double[::1] opac, const double[:, ::1] colors,
                    const double[:, :, ::1] grad_out, records, double cutoff, double t_min):
    cdef Py_ssize_t m = means.shape[0]
    cdef Py_ssize_t ntx = (width + tile - 1) // tile
    cdef Py_ssize_t nty = (height + tile - 1) // tile
    g_means_np = np.zeros((m, 2), dtype=np.float64)
    g_conics_np = np.zeros((m, 3), dtype=np.float64)
    g_opac_np = np.zeros(m, dtype=np.float64)
    g_colors_np = np.zeros((m, 3), dtype=np.float64)
    cdef double[:, ::1] g_means = g_means_np
    cdef double[:, ::1] g_conics = g_conics_np
    cdef double[::1] g_opac = g_opac_np
    cdef double[:, ::1] g_colors = g_colors_np
    cdef const cnp.int64_t[::1] off = records[0]
    cdef const int[:, ::1] count = records[1]
    cdef const int[::1] slot = records[2]
    cdef const double[::1] fall = records[3]

    cdef Py_ssize_t longest = 1
    cdef Py_ssize_t t
    for t in range(ntx * nty):
        if tile_start[t + 1] - tile_start[t] > longest:
            longest = tile_start[t + 1] - tile_start[t]
    tbuf_np = np.empty(longest, dtype=np.float64)
    cdef double[::1] tbuf = tbuf_np

    cdef Py_ssize_t tx, ty, px, py, g, n, j, base, x0, y0, tw, k0
    cdef double T, dx, dy, alpha, gauss, go0, go1, go2, b0, b1, b2, g_alpha, g_q, w
    for ty in range(nty):
        for tx in range(ntx):
            t = ty * ntx + tx
            x0 = tx * tile
            y0 = ty * tile
            tw = min(x0 + tile, width) - x0
            k0 = tile_start[t]
            for py in range(y0, min(y0 + tile, height)):
                for px in range(x0, x0 + tw):
                    go0 = grad_out[py, px, 0]
                    go1 = grad_out[py, px, 1]
                    go2 = grad_out[py, px, 2]
                    n = count[py, px]
                    if n == 0 or (go0 == 0.0 and go1 == 0.0 and go2 == 0.0):
                        continue
                    base = off[t] + ((py - y0) * tw + (px - x0)) * (tile_start[t + 1] - k0)
                    T = 1.0
                    for j in range(n):
                        tbuf[j] = T
                        T = T * (1.0 - opac[tile_ids[k0 + slot[base + j]]] * fall[base + j])
                    # b* is the color composited behind splat j
                    b0 = 0.0
                    b1 = 0.0
                    b2 = 0.0
                    for j in range(n - 1, -1, -1):
                        g = tile_ids[k0 + slot[base + j]]
                        gauss = fall[base + j]
                        alpha = opac[g] * gauss
                        T = tbuf[j]
                        w = alpha * T
                        g_colors[g, 0] += go0 * w
                        g_colors[g, 1] += go1 * w
                        g_colors[g, 2] += go2 * w
                        g_alpha = T * (go0 * (colors[g, 0] - b0) + go1 * (colors[g, 1] - b1)
                                       + go2 * (colors[g, 2] - b2))
                        b0 = alpha * colors[g, 0] + (1.0 - alpha) * b0
                        b1 = alpha * colors[g, 1] + (1.0 - alpha) * b1
                        b2 = alpha * colors[g, 2] + (1.0 - alpha) * b2
                        g_opac[g] += g_alpha * gauss
                        g_q = -0.5 * alpha * g_alpha
                        dx = px - means[g, 0]
                        dy = py - means[g, 1]
                        g_conics[g, 0] += g_q * dx * dx
                        g_conics[g, 1] += g_q * 2.0 * dx * dy
                        g_conics[g, 2] += g_q * dy * dy
                        # dq/dmean = -2 * conic @ d
                        g_means[g, 0] += -2.0 * g_q * (conics[g, 0] * dx + conics[g, 1] * dy)
                        g_means[g, 1] += -2.0 * g_q * (conics[g, 1] * dx + conics[g, 2] * dy)
    return g_means_np, g_conics_np, g_opac_np, g_colors_np


cdef void _blur_ptr(const double* src, double* tmp, double* out, Py_ssize_t h, Py_ssize_t wd,
                    Py_ssize_t c, const double* w, Py_ssize_t nw) noexcept nogil:
    cdef Py_ssize_t r = nw // 2
    cdef Py_ssize_t row = wd * c
    cdef Py_ssize_t y, o, i, lo, hi, shift
    cdef double wo
    cdef double* trow
    cdef const double* srow
    cdef double* orow
    for i in range(h * row):
        tmp[i] = 0.0
        out[i] = 0.0
    for y in range(h):
        trow = tmp + y * row
        lo = max(0, r - y)
        hi = min(nw, h + r - y)
        for o in range(lo, hi):
            wo = w[o]
            srow = src + (y + o - r) * row
            for i in range(row):
                trow[i] += wo * srow[i]
    for y in range(h):
        trow = tmp + y * row
        orow = out + y * row
        for o in range(nw):
            wo = w[o]
            shift = (o - r) * c
            lo = max(0, r - o) * c
            hi = min(wd, wd + r - o) * c
            for i in range(lo, hi):
                orow[i] += wo * trow[i + shift]


def blur_same(const double[:, :, ::1] img, const double[::1] w):
    """Separable correlation with zero padding, output the size of ``img``."""
    cdef Py_ssize_t h = img.shape[0], wd = img.shape[1], c = img.shape[2]
    out_np = np.empty((h, wd, c), dtype=np.float64)
    tmp_np = np.empty((h, wd, c), dtype=np.float64)
    cdef double[:, :, ::1] out = out_np
    cdef double[:, :, ::1] tmp = tmp_np
    _blur_ptr(&img[0, 0, 0], &tmp[0, 0, 0], &out[0, 0, 0], h, wd, c, &w[0], w.shape[0])
    return out_np


def ssim_grad(const double[:, :, ::1] A, const double[:, :, ::1] B, const double[:, :, ::1] mu_a,
              const double[:, :, ::1] sq_a, const double[::1] w, double c1, double c2, bint grad_a):
    """Mean SSIM of A and B with gradients w.r.t. B (and A when ``grad_a``).

    ``mu_a`` and ``sq_a`` are the windowed mean of A and of A squared.
    """
    cdef Py_ssize_t h = A.shape[0], wd = A.shape[1], c = A.shape[2]
    cdef Py_ssize_t n = h * wd * c, i
    cdef Py_ssize_t nw = w.shape[0]
    cdef const double* pw = &w[0]
    work_np = np.empty((9, h, wd, c), dtype=np.float64)
    cdef double[:, :, :, ::1] work = work_np
    cdef double* tmp = &work[0, 0, 0, 0]
    cdef double* mu_b = &work[1, 0, 0, 0]
    cdef double* sq_b = &work[2, 0, 0, 0]
    cdef double* ab = &work[3, 0, 0, 0]
    cdef double* f0 = &work[4, 0, 0, 0]
    cdef double* f1 = &work[5, 0, 0, 0]
    cdef double* f2 = &work[6, 0, 0, 0]
    cdef double* e0 = &work[7, 0, 0, 0]
    cdef double* e1 = &work[8, 0, 0, 0]
    cdef const double* pa = &A[0, 0, 0]
    cdef const double* pb = &B[0, 0, 0]
    cdef const double* ma = &mu_a[0, 0, 0]
    cdef const double* qa = &sq_a[0, 0, 0]
    cdef double total = 0.0, g = 1.0 / n
    cdef double va, vb, cv, n1, n2, d1, d2, S, dcov, dvar_b, dvar_a, dmu_b, dmu_a

    _blur_ptr(pb, tmp, mu_b, h, wd, c, pw, nw)
    for i in range(n):
        e0[i] = pb[i] * pb[i]
        e1[i] = pa[i] * pb[i]
    _blur_ptr(e0, tmp, sq_b, h, wd, c, pw, nw)
    _blur_ptr(e1, tmp, ab, h, wd, c, pw, nw)

    gb_np = np.empty((h, wd, c), dtype=np.float64)
    ga_np = np.empty((h, wd, c), dtype=np.float64) if grad_a else None
    cdef double[:, :, ::1] gbv = gb_np
    cdef double* gb = &gbv[0, 0, 0]
    cdef double[:, :, ::1] gav
    cdef double* ga = NULL
    if grad_a:
        gav = ga_np
        ga = &gav[0, 0, 0]

    # per-map derivatives w.r.t. the windowed quantities of B: mu, E[x^2], E[xy]
    for i in range(n):
        va = qa[i] - ma[i] * ma[i]
        vb = sq_b[i] - mu_b[i] * mu_b[i]
        cv = ab[i] - ma[i] * mu_b[i]
        n1 = 2.0 * ma[i] * mu_b[i] + c1
        n2 = 2.0 * cv + c2
        d1 = ma[i] * ma[i] + mu_b[i] * mu_b[i] + c1
        d2 = va + vb + c2
        S = (n1 * n2) / (d1 * d2)
        total += S
        dcov = 2.0 * n1 / (d1 * d2) * g
        dvar_b = -S / d2 * g
        dmu_b = (2.0 * ma[i] * n2 / (d1 * d2) - S * 2.0 * mu_b[i] / d1) * g
        f0[i] = dmu_b + dvar_b * (-2.0 * mu_b[i]) + dcov * (-ma[i])
        f1[i] = dvar_b
        f2[i] = dcov
        if grad_a:
            dmu_a = (2.0 * mu_b[i] * n2 / (d1 * d2) - S * 2.0 * ma[i] / d1) * g
            # stash A-side mean term in the E[x^2] buffer, no longer needed
            sq_b[i] = dmu_a + dvar_b * (-2.0 * ma[i]) + dcov * (-mu_b[i])
    _blur_ptr(f0, tmp, e0, h, wd, c, pw, nw)
    _blur_ptr(f1, tmp, e1, h, wd, c, pw, nw)
    _blur_ptr(f2, tmp, ab, h, wd, c, pw, nw)
    for i in range(n):
        gb[i] = e0[i] + 2.0 * pb[i] * e1[i] + pa[i] * ab[i]
    if grad_a:
        # dS/dvar is symmetric in A and B
        _blur_ptr(sq_b, tmp, e0, h, wd, c, pw, nw)
        for i in range(n):
            ga[i] = e0[i] + 2.0 * pa[i] * e1[i] + pb[i] * ab[i]
    return total / n, gb_np, ga_np
