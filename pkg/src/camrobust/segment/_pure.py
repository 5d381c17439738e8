"""Pure numpy implementations of the segmentation inner loops.

This is the fallback backend used when the compiled extension is absent
(or CAMROBUST_PURE is set).  The compiled kernels implement the same
arithmetic in the same order, so both backends produce identical label
fields; the shared drivers in __init__ handle everything that is not a
hot loop.
"""

from __future__ import annotations

import math

import numpy as np

NAME = "pure"


# ---------------------------------------------------------------------------
# quickshift


def qs_density(color: np.ndarray, kernel_size: float) -> np.ndarray:
    """Parzen density over the joint (color, position) feature space.

    Window radius is ceil(3*kernel_size); borders are mirrored
    (symmetric reflection) so a constant image has constant density.
    """
    h, w, _ = color.shape
    radius = math.ceil(3.0 * kernel_size)
    inv = 1.0 / (2.0 * kernel_size * kernel_size)
    padded = np.pad(color, ((radius, radius), (radius, radius), (0, 0)), mode="symmetric")
    dens = np.zeros((h, w), dtype=np.float64)
    for dy in range(-radius, radius + 1):
        sp = float(dy * dy)
        for dx in range(-radius, radius + 1):
            block = padded[radius + dy : radius + dy + h, radius + dx : radius + dx + w]
            diff = block - color
            dist = diff[:, :, 0] ** 2 + diff[:, :, 1] ** 2 + diff[:, :, 2] ** 2
            dens += np.exp(-(dist + (sp + dx * dx)) * inv)
    return dens


def qs_parents(
    color: np.ndarray,
    density: np.ndarray,
    max_dist: float,
    root_mask: np.ndarray,
    radius: int,
) -> np.ndarray:
    """Flat parent index per pixel: the nearest strictly-denser pixel.

    Candidates are searched within `radius` pixels (Chebyshev) and must
    lie within max_dist in the joint feature metric
    sqrt(color_dist^2 + dy^2 + dx^2); nearest wins, exact distance ties
    break to the smallest row-major index.  Pixels with no candidate are
    their own parent.  root_mask marks pixels already known to be roots
    (no strictly greater density within reach).
    """
    h, w, _ = color.shape
    n = h * w
    flat = np.arange(n, dtype=np.int64).reshape(h, w)
    parent = flat.copy()
    maxd2 = max_dist * max_dist
    if radius < 1 or bool(root_mask.all()):
        return parent.ravel()

    best_d = np.full((h, w), np.inf)
    best_i = np.full((h, w), n, dtype=np.int64)  # n = no candidate yet
    searching = ~root_mask

    for r in range(1, radius + 1):
        for dy, dx in _ring_offsets(r):
            y0, y1 = max(0, -dy), h - max(0, dy)
            x0, x1 = max(0, -dx), w - max(0, dx)
            if y0 >= y1 or x0 >= x1:
                continue
            ctr = (slice(y0, y1), slice(x0, x1))
            nbr = (slice(y0 + dy, y1 + dy), slice(x0 + dx, x1 + dx))
            denser = density[nbr] > density[ctr]
            if not denser.any():
                continue
            diff = color[nbr] - color[ctr]
            dist = (diff[:, :, 0] ** 2 + diff[:, :, 1] ** 2 + diff[:, :, 2] ** 2) + float(
                dy * dy + dx * dx
            )
            nbr_idx = flat[nbr]
            cur_d = best_d[ctr]
            cur_i = best_i[ctr]
            upd = (
                searching[ctr]
                & denser
                & (dist <= maxd2)
                & ((dist < cur_d) | ((dist == cur_d) & (nbr_idx < cur_i)))
            )
            if upd.any():
                cur_d[upd] = dist[upd]
                cur_i[upd] = nbr_idx[upd]
        # a ring-r' candidate has distance >= r', so once best_d < (r+1)^2
        # no later ring can improve or tie
        nxt = float((r + 1) * (r + 1))
        if not (searching & ((best_i == n) | (best_d >= nxt))).any():
            break

    found = searching.ravel() & (best_i.ravel() != n)
    out = parent.ravel()
    out[found] = best_i.ravel()[found]
    return out


def _ring_offsets(r: int):
    offs = []
    for dy in range(-r, r + 1):
        if abs(dy) == r:
            for dx in range(-r, r + 1):
                offs.append((dy, dx))
        else:
            offs.append((dy, -r))
            offs.append((dy, r))
    return offs


# ---------------------------------------------------------------------------
# slic


def slic_iterate(
    color: np.ndarray,
    cy: np.ndarray,
    cx: np.ndarray,
    ck: np.ndarray,
    s_interval: float,
    sw2: float,
    n_iters: int,
) -> np.ndarray:
    """Fixed-count k-means iterations over (color, weighted position).

    Assignment searches a 2S window around each center; distance is
    color_dist^2 + sw2 * spatial_dist^2 with ties kept by the lowest
    cluster index.  Centers move to member means; empty clusters hold
    their position.  Returns the final assignment.
    """
    h, w, _ = color.shape
    k_count = len(cy)
    ys = np.arange(h, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)
    cy = cy.copy()
    cx = cx.copy()
    ck = ck.copy()
    labels = np.zeros((h, w), dtype=np.int32)

    for it in range(n_iters):
        best = np.full((h, w), np.inf)
        labels = np.full((h, w), -1, dtype=np.int32)
        for k in range(k_count):
            y0 = max(0, int(math.ceil(cy[k] - 2.0 * s_interval)))
            y1 = min(h - 1, int(math.floor(cy[k] + 2.0 * s_interval)))
            x0 = max(0, int(math.ceil(cx[k] - 2.0 * s_interval)))
            x1 = min(w - 1, int(math.floor(cx[k] + 2.0 * s_interval)))
            if y0 > y1 or x0 > x1:
                continue
            win = color[y0 : y1 + 1, x0 : x1 + 1]
            dc = (
                (win[:, :, 0] - ck[k, 0]) ** 2
                + (win[:, :, 1] - ck[k, 1]) ** 2
                + (win[:, :, 2] - ck[k, 2]) ** 2
            )
            dy = ys[y0 : y1 + 1, None] - cy[k]
            dx = xs[None, x0 : x1 + 1] - cx[k]
            dist = dc + sw2 * (dy * dy + dx * dx)
            sub = (slice(y0, y1 + 1), slice(x0, x1 + 1))
            upd = dist < best[sub]
            best[sub][upd] = dist[upd]
            labels[sub][upd] = k
        _assign_orphans_brute(color, labels, cy, cx, ck, sw2)
        if it < n_iters - 1:
            _update_centers(color, labels, cy, cx, ck, k_count)
    return labels


def _assign_orphans_brute(color, labels, cy, cx, ck, sw2):
    """Pixels outside every search window take the globally nearest center."""
    miss = np.argwhere(labels < 0)
    for y, x in miss:
        c0, c1, c2 = color[y, x]
        dists = (
            (ck[:, 0] - c0) ** 2
            + (ck[:, 1] - c1) ** 2
            + (ck[:, 2] - c2) ** 2
            + sw2 * ((cy - y) ** 2 + (cx - x) ** 2)
        )
        labels[y, x] = int(np.argmin(dists))


def _update_centers(color, labels, cy, cx, ck, k_count):
    flat = labels.ravel().astype(np.int64)
    h, w, _ = color.shape
    counts = np.bincount(flat, minlength=k_count).astype(np.float64)
    yy = np.repeat(np.arange(h, dtype=np.float64), w)
    xx = np.tile(np.arange(w, dtype=np.float64), h)
    sum_y = np.bincount(flat, weights=yy, minlength=k_count)
    sum_x = np.bincount(flat, weights=xx, minlength=k_count)
    nonzero = counts > 0
    cy[nonzero] = sum_y[nonzero] / counts[nonzero]
    cx[nonzero] = sum_x[nonzero] / counts[nonzero]
    for ch in range(3):
        sums = np.bincount(flat, weights=color[:, :, ch].ravel(), minlength=k_count)
        ck[nonzero, ch] = sums[nonzero] / counts[nonzero]


# ---------------------------------------------------------------------------
# felzenszwalb


def felz_merge(
    edge_a: np.ndarray,
    edge_b: np.ndarray,
    order: np.ndarray,
    weights: np.ndarray,
    scale: float,
    min_size: int,
    n_pixels: int,
) -> np.ndarray:
    """Graph merging with the adaptive threshold, then min-size absorption.

    First pass joins components when the connecting edge is no heavier
    than both components' internal threshold tau = max_MST_weight +
    scale/size.  Second pass walks the same ascending edge order and joins
    any remaining component below min_size to its lightest-edge neighbor.
    Returns each pixel's component root.
    """
    parent = np.arange(n_pixels, dtype=np.int64)
    size = np.ones(n_pixels, dtype=np.int64)
    thr = np.full(n_pixels, float(scale))  # tau of a singleton: 0 + scale/1

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(a: int, b: int) -> int:
        if size[a] < size[b] or (size[a] == size[b] and b < a):
            a, b = b, a
        parent[b] = a
        size[a] += size[b]
        return a

    for e in order:
        a = find(int(edge_a[e]))
        b = find(int(edge_b[e]))
        if a == b:
            continue
        wgt = weights[e]
        if wgt <= thr[a] and wgt <= thr[b]:
            root = union(a, b)
            thr[root] = wgt + scale / size[root]

    if min_size > 1:
        for e in order:
            a = find(int(edge_a[e]))
            b = find(int(edge_b[e]))
            if a != b and (size[a] < min_size or size[b] < min_size):
                union(a, b)

    return np.array([find(i) for i in range(n_pixels)], dtype=np.int64)
