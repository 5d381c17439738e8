# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled segmentation inner loops.

Mirrors _pure.py arithmetic operation-for-operation (same expression
shapes, same accumulation order) so the two backends produce identical
label fields.  Keep the two files in sync when touching either.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, exp, floor

cnp.import_array()

NAME = "compiled"


cdef inline Py_ssize_t _mirror(Py_ssize_t idx, Py_ssize_t n) nogil:
    # symmetric reflection (d c b a | a b c d), matching np.pad "symmetric"
    cdef Py_ssize_t period = 2 * n
    cdef Py_ssize_t m = idx % period
    if m < 0:
        m += period
    if m >= n:
        m = period - 1 - m
    return m


def qs_density(cnp.ndarray[cnp.float64_t, ndim=3] color, double kernel_size):
    cdef Py_ssize_t h = color.shape[0]
    cdef Py_ssize_t w = color.shape[1]
    cdef Py_ssize_t radius = <Py_ssize_t>ceil(3.0 * kernel_size)
    cdef double inv = 1.0 / (2.0 * kernel_size * kernel_size)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dens = np.zeros((h, w), dtype=np.float64)
    cdef double[:, :, ::1] c = np.ascontiguousarray(color)
    cdef double[:, ::1] d = dens
    cdef Py_ssize_t i, j, dy, dx, y, x
    cdef double acc, d0, d1, d2, dist, sp

    with nogil:
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for dy in range(-radius, radius + 1):
                    sp = <double>(dy * dy)
                    y = _mirror(i + dy, h)
                    for dx in range(-radius, radius + 1):
                        x = _mirror(j + dx, w)
                        d0 = c[y, x, 0] - c[i, j, 0]
                        d1 = c[y, x, 1] - c[i, j, 1]
                        d2 = c[y, x, 2] - c[i, j, 2]
                        dist = d0 * d0 + d1 * d1 + d2 * d2
                        acc += exp(-(dist + (sp + <double>(dx * dx))) * inv)
                d[i, j] = acc
    return dens


def qs_parents(
    cnp.ndarray[cnp.float64_t, ndim=3] color,
    cnp.ndarray[cnp.float64_t, ndim=2] density,
    double max_dist,
    cnp.ndarray[cnp.uint8_t, ndim=2, cast=True] root_mask,
    Py_ssize_t radius,
):
    cdef Py_ssize_t h = color.shape[0]
    cdef Py_ssize_t w = color.shape[1]
    cdef Py_ssize_t n = h * w
    cdef cnp.ndarray[cnp.int64_t, ndim=1] parent = np.arange(n, dtype=np.int64)
    cdef double maxd2 = max_dist * max_dist
    if radius < 1:
        return parent

    cdef double[:, :, ::1] c = np.ascontiguousarray(color)
    cdef double[:, ::1] dens = np.ascontiguousarray(density)
    cdef cnp.uint8_t[:, ::1] roots = np.ascontiguousarray(root_mask)
    cdef cnp.int64_t[::1] par = parent
    cdef Py_ssize_t i, j, r, dy, dx, y, x
    cdef cnp.int64_t best_i, cand
    cdef double best_d, here, d0, d1, d2, dist

    with nogil:
        for i in range(h):
            for j in range(w):
                if roots[i, j]:
                    continue
                here = dens[i, j]
                best_d = -1.0
                best_i = -1
                for r in range(1, radius + 1):
                    if best_i >= 0 and best_d < <double>(r * r):
                        break
                    for dy in range(-r, r + 1):
                        y = i + dy
                        if y < 0 or y >= h:
                            continue
                        if dy == -r or dy == r:
                            for dx in range(-r, r + 1):
                                x = j + dx
                                if x < 0 or x >= w:
                                    continue
                                if dens[y, x] > here:
                                    d0 = c[y, x, 0] - c[i, j, 0]
                                    d1 = c[y, x, 1] - c[i, j, 1]
                                    d2 = c[y, x, 2] - c[i, j, 2]
                                    dist = (d0 * d0 + d1 * d1 + d2 * d2) + <double>(dy * dy + dx * dx)
                                    cand = <cnp.int64_t>(y * w + x)
                                    if dist <= maxd2 and (
                                        best_i < 0
                                        or dist < best_d
                                        or (dist == best_d and cand < best_i)
                                    ):
                                        best_d = dist
                                        best_i = cand
                        else:
                            # interior rows touch the ring only at dx = -r and +r
                            dx = -r
                            while dx <= r:
                                x = j + dx
                                if 0 <= x < w and dens[y, x] > here:
                                    d0 = c[y, x, 0] - c[i, j, 0]
                                    d1 = c[y, x, 1] - c[i, j, 1]
                                    d2 = c[y, x, 2] - c[i, j, 2]
                                    dist = (d0 * d0 + d1 * d1 + d2 * d2) + <double>(dy * dy + dx * dx)
                                    cand = <cnp.int64_t>(y * w + x)
                                    if dist <= maxd2 and (
                                        best_i < 0
                                        or dist < best_d
                                        or (dist == best_d and cand < best_i)
                                    ):
                                        best_d = dist
                                        best_i = cand
                                dx += 2 * r
                if best_i >= 0:
                    par[i * w + j] = best_i
    return parent


def slic_iterate(
    cnp.ndarray[cnp.float64_t, ndim=3] color,
    cnp.ndarray[cnp.float64_t, ndim=1] cy0,
    cnp.ndarray[cnp.float64_t, ndim=1] cx0,
    cnp.ndarray[cnp.float64_t, ndim=2] ck0,
    double s_interval,
    double sw2,
    int n_iters,
):
    cdef Py_ssize_t h = color.shape[0]
    cdef Py_ssize_t w = color.shape[1]
    cdef Py_ssize_t k_count = cy0.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cy = cy0.copy()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cx = cx0.copy()
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ck = ck0.copy()
    cdef cnp.ndarray[cnp.int32_t, ndim=2] labels = np.full((h, w), -1, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] best = np.empty((h, w), dtype=np.float64)

    cdef double[:, :, ::1] c = np.ascontiguousarray(color)
    cdef double[::1] vy = cy
    cdef double[::1] vx = cx
    cdef double[:, ::1] vk = ck
    cdef cnp.int32_t[:, ::1] lab = labels
    cdef double[:, ::1] bst = best

    cdef cnp.ndarray[cnp.float64_t, ndim=1] sum_y = np.empty(k_count, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sum_x = np.empty(k_count, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] sum_c = np.empty((k_count, 3), dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.empty(k_count, dtype=np.int64)
    cdef double[::1] sy = sum_y
    cdef double[::1] sx = sum_x
    cdef double[:, ::1] sc = sum_c
    cdef cnp.int64_t[::1] cnt = counts

    cdef Py_ssize_t it, k, i, j, y0, y1, x0, x1, kk
    cdef double d0, d1, d2, dc, dyv, dxv, dist, bd
    cdef cnp.int32_t bk

    with nogil:
        for it in range(n_iters):
            for i in range(h):
                for j in range(w):
                    bst[i, j] = -1.0
                    lab[i, j] = -1
            for k in range(k_count):
                y0 = <Py_ssize_t>ceil(vy[k] - 2.0 * s_interval)
                if y0 < 0:
                    y0 = 0
                y1 = <Py_ssize_t>floor(vy[k] + 2.0 * s_interval)
                if y1 > h - 1:
                    y1 = h - 1
                x0 = <Py_ssize_t>ceil(vx[k] - 2.0 * s_interval)
                if x0 < 0:
                    x0 = 0
                x1 = <Py_ssize_t>floor(vx[k] + 2.0 * s_interval)
                if x1 > w - 1:
                    x1 = w - 1
                if y0 > y1 or x0 > x1:
                    continue
                for i in range(y0, y1 + 1):
                    dyv = <double>i - vy[k]
                    for j in range(x0, x1 + 1):
                        d0 = c[i, j, 0] - vk[k, 0]
                        d1 = c[i, j, 1] - vk[k, 1]
                        d2 = c[i, j, 2] - vk[k, 2]
                        dc = d0 * d0 + d1 * d1 + d2 * d2
                        dxv = <double>j - vx[k]
                        dist = dc + sw2 * (dyv * dyv + dxv * dxv)
                        if lab[i, j] < 0 or dist < bst[i, j]:
                            bst[i, j] = dist
                            lab[i, j] = <cnp.int32_t>k
            # pixels no window reached: nearest center over all clusters
            for i in range(h):
                for j in range(w):
                    if lab[i, j] >= 0:
                        continue
                    bd = -1.0
                    bk = -1
                    for kk in range(k_count):
                        d0 = c[i, j, 0] - vk[kk, 0]
                        d1 = c[i, j, 1] - vk[kk, 1]
                        d2 = c[i, j, 2] - vk[kk, 2]
                        dc = d0 * d0 + d1 * d1 + d2 * d2
                        dyv = <double>i - vy[kk]
                        dxv = <double>j - vx[kk]
                        dist = dc + sw2 * (dyv * dyv + dxv * dxv)
                        if bk < 0 or dist < bd:
                            bd = dist
                            bk = <cnp.int32_t>kk
                    lab[i, j] = bk
            if it < n_iters - 1:
                for k in range(k_count):
                    sy[k] = 0.0
                    sx[k] = 0.0
                    sc[k, 0] = 0.0
                    sc[k, 1] = 0.0
                    sc[k, 2] = 0.0
                    cnt[k] = 0
                for i in range(h):
                    for j in range(w):
                        k = lab[i, j]
                        sy[k] += <double>i
                        sx[k] += <double>j
                        sc[k, 0] += c[i, j, 0]
                        sc[k, 1] += c[i, j, 1]
                        sc[k, 2] += c[i, j, 2]
                        cnt[k] += 1
                for k in range(k_count):
                    if cnt[k] > 0:
                        vy[k] = sy[k] / <double>cnt[k]
                        vx[k] = sx[k] / <double>cnt[k]
                        vk[k, 0] = sc[k, 0] / <double>cnt[k]
                        vk[k, 1] = sc[k, 1] / <double>cnt[k]
                        vk[k, 2] = sc[k, 2] / <double>cnt[k]
    return labels


def felz_merge(
    cnp.ndarray[cnp.int64_t, ndim=1] edge_a,
    cnp.ndarray[cnp.int64_t, ndim=1] edge_b,
    cnp.ndarray[cnp.int64_t, ndim=1] order,
    cnp.ndarray[cnp.float64_t, ndim=1] weights,
    double scale,
    cnp.int64_t min_size,
    cnp.int64_t n_pixels,
):
    cdef cnp.ndarray[cnp.int64_t, ndim=1] parent = np.arange(n_pixels, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] size = np.ones(n_pixels, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] thr = np.full(n_pixels, scale, dtype=np.float64)
    cdef cnp.int64_t[::1] par = parent
    cdef cnp.int64_t[::1] sz = size
    cdef double[::1] th = thr
    cdef cnp.int64_t[::1] ea = edge_a
    cdef cnp.int64_t[::1] eb = edge_b
    cdef cnp.int64_t[::1] od = order
    cdef double[::1] wt = weights
    cdef Py_ssize_t n_edges = order.shape[0]
    cdef Py_ssize_t e
    cdef cnp.int64_t a, b, root, tmp, i
    cdef double wgt

    with nogil:
        for e in range(n_edges):
            a = _find(par, ea[od[e]])
            b = _find(par, eb[od[e]])
            if a == b:
                continue
            wgt = wt[od[e]]
            if wgt <= th[a] and wgt <= th[b]:
                if sz[a] < sz[b] or (sz[a] == sz[b] and b < a):
                    tmp = a
                    a = b
                    b = tmp
                par[b] = a
                sz[a] += sz[b]
                th[a] = wgt + scale / <double>sz[a]
        if min_size > 1:
            for e in range(n_edges):
                a = _find(par, ea[od[e]])
                b = _find(par, eb[od[e]])
                if a != b and (sz[a] < min_size or sz[b] < min_size):
                    if sz[a] < sz[b] or (sz[a] == sz[b] and b < a):
                        tmp = a
                        a = b
                        b = tmp
                    par[b] = a
                    sz[a] += sz[b]
        for i in range(n_pixels):
            par[i] = _find(par, i)
    return parent


cdef inline cnp.int64_t _find(cnp.int64_t[::1] par, cnp.int64_t i) nogil:
    while par[i] != i:
        par[i] = par[par[i]]
        i = par[i]
    return i
