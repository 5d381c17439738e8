"""Superpixel segmentation: QuickShift, SLIC, and Felzenszwalb.

Each method is deterministic (fixed iteration counts, explicit
tie-breaking) and returns a SegmentationMap whose labels are contiguous
0..m-1 in first-occurrence row-major order.  Segmentation always runs on
the original image and is reused across every CAM and perturbation
variant.

The hot loops have two interchangeable backends: a compiled extension
(built from _kernels.pyx) and a pure numpy fallback (_pure.py) selected at
import time; set CAMROBUST_PURE=1 to force the fallback.  Both produce
identical label fields.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .._filters import smooth_rgb
from ..errors import ImageTooSmall
from ..model import MIN_IMAGE_SIDE, Image, SegmentationMap

from . import _pure

if os.environ.get("CAMROBUST_PURE"):
    _selected = _pure
else:
    try:
        from . import _kernels as _selected  # type: ignore[attr-defined]
    except ImportError:
        _selected = _pure


def active_backend() -> str:
    """Name of the backend picked at import: "compiled" or "pure"."""
    return _selected.NAME


def get_backend(name: str | None = None):
    """Resolve a backend module by name; None means the selected one."""
    if name is None:
        return _selected
    if name == "pure":
        return _pure
    if name == "compiled":
        from . import _kernels  # noqa: PLC0415

        return _kernels
    raise ValueError(f"unknown backend {name!r}")


@dataclass(frozen=True)
class QuickshiftParams:
    kernel_size: float = 10.0
    max_dist: float = 200.0
    ratio: float = 0.5

    def __post_init__(self):
        if self.kernel_size < 1:
            raise ValueError(f"kernel_size must be >= 1, got {self.kernel_size}")
        if self.max_dist <= 0:
            raise ValueError(f"max_dist must be positive, got {self.max_dist}")
        if not (0.0 < self.ratio <= 1.0):
            raise ValueError(f"ratio must lie in (0, 1], got {self.ratio}")


@dataclass(frozen=True)
class SlicParams:
    n_segments: int = 120
    compactness: float = 10.0
    sigma: float = 1.0
    start_label: int = 0

    def __post_init__(self):
        if self.n_segments < 1:
            raise ValueError(f"n_segments must be >= 1, got {self.n_segments}")
        if self.compactness <= 0:
            raise ValueError(f"compactness must be positive, got {self.compactness}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.start_label != 0:
            raise ValueError("labels are contiguous from 0; start_label must be 0")


@dataclass(frozen=True)
class FelzenszwalbParams:
    scale: float = 100.0
    sigma: float = 0.5
    min_size: int = 50

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.min_size < 1:
            raise ValueError(f"min_size must be >= 1, got {self.min_size}")


def _check_image(image: Image) -> None:
    if image.height < MIN_IMAGE_SIDE or image.width < MIN_IMAGE_SIDE:
        raise ImageTooSmall(f"{image.width}x{image.height} is below {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}")


# ---------------------------------------------------------------------------
# quickshift


def quickshift(
    image: Image,
    params: QuickshiftParams = QuickshiftParams(),
    backend: str | None = None,
) -> SegmentationMap:
    """Mode-seeking segmentation in joint (scaled color, position) space.

    Per-pixel Parzen density with bandwidth kernel_size over features
    (ratio-scaled RGB in byte range, pixel coordinates); each pixel links
    to its nearest strictly-denser pixel inside the density window
    (radius 3x kernel_size), with links capped at max_dist in the joint
    metric and distance ties breaking to the smallest row-major index.
    Link-free pixels are roots; segments are the link trees.
    """
    _check_image(image)
    impl = get_backend(backend)
    h, w = image.height, image.width
    color = np.ascontiguousarray(image.data.astype(np.float64) * params.ratio)
    density = impl.qs_density(color, float(params.kernel_size))

    # searching past floor(max_dist) is pointless: joint distance >= spatial
    radius = min(
        int(math.ceil(3.0 * params.kernel_size)),
        int(math.floor(params.max_dist)),
        max(h, w) - 1,
    )
    if radius < 1:
        # no pixel is reachable: everything is a root
        root_mask = np.ones((h, w), dtype=bool)
    else:
        window = 2 * radius + 1
        local_max = ndimage.maximum_filter(density, size=window, mode="constant", cval=-np.inf)
        root_mask = density >= local_max

    parents = impl.qs_parents(color, density, float(params.max_dist), root_mask, radius)
    roots = _resolve_roots(parents)
    labels, count = _relabel_array(roots.reshape(h, w))
    return SegmentationMap(labels=labels, segment_count=count)


def _resolve_roots(parents: np.ndarray) -> np.ndarray:
    """Follow parent links to each tree's root by pointer doubling."""
    roots = parents
    while True:
        nxt = roots[roots]
        if np.array_equal(nxt, roots):
            return roots
        roots = nxt


# ---------------------------------------------------------------------------
# slic


def slic(
    image: Image,
    params: SlicParams = SlicParams(),
    backend: str | None = None,
) -> SegmentationMap:
    """Grid-initialized k-means superpixels with 10 fixed iterations.

    Features are RGB scaled to [0, 100] (so the default compactness
    balances color against position the way the classical Lab-space
    setup does) plus compactness/S-weighted coordinates.  Disconnected
    leftovers of each cluster are absorbed into the nearest adjacent
    cluster afterwards.
    """
    _check_image(image)
    impl = get_backend(backend)
    h, w = image.height, image.width
    color = image.to_float() * 100.0
    if params.sigma > 0:
        color = smooth_rgb(color, params.sigma)
    color = np.ascontiguousarray(color)

    s_interval = math.sqrt(h * w / params.n_segments)
    grid_h = max(1, round(h / s_interval))
    grid_w = max(1, round(w / s_interval))
    cy = np.empty(grid_h * grid_w, dtype=np.float64)
    cx = np.empty(grid_h * grid_w, dtype=np.float64)
    ck = np.empty((grid_h * grid_w, 3), dtype=np.float64)
    for gi in range(grid_h):
        for gj in range(grid_w):
            k = gi * grid_w + gj
            cy[k] = (gi + 0.5) * h / grid_h
            cx[k] = (gj + 0.5) * w / grid_w
            ck[k] = color[min(h - 1, int(cy[k])), min(w - 1, int(cx[k]))]

    sw2 = (params.compactness / s_interval) ** 2
    labels = impl.slic_iterate(color, cy, cx, ck, float(s_interval), float(sw2), 10)
    labels = _absorb_orphans(labels, color, sw2)
    labels, count = _relabel_array(labels)
    return SegmentationMap(labels=labels, segment_count=count)


_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.int8)


def _absorb_orphans(labels: np.ndarray, color: np.ndarray, sw2: float) -> np.ndarray:
    """Merge disconnected leftovers of each cluster into a neighbor.

    Per cluster, the largest connected component keeps the label (area
    ties go to the component appearing first in row-major order).  Every
    other component is reassigned, in row-major order of first pixel, to
    the adjacent cluster whose mean feature vector is nearest in the SLIC
    distance; ties take the smallest label.
    """
    h, w = labels.shape
    k_count = int(labels.max()) + 1
    out = labels.copy()

    # cluster means from the final assignment, used as absorption targets
    flat = labels.ravel().astype(np.int64)
    counts = np.bincount(flat, minlength=k_count).astype(np.float64)
    counts[counts == 0] = 1.0
    mean_y = np.bincount(flat, weights=np.repeat(np.arange(h, dtype=np.float64), w), minlength=k_count) / counts
    mean_x = np.bincount(flat, weights=np.tile(np.arange(w, dtype=np.float64), h), minlength=k_count) / counts
    mean_c = np.stack(
        [np.bincount(flat, weights=color[:, :, ch].ravel(), minlength=k_count) / counts for ch in range(3)],
        axis=1,
    )

    orphans = []
    for k in range(k_count):
        mask = labels == k
        if not mask.any():
            continue
        comp, n_comp = ndimage.label(mask, structure=_FOUR_CONNECTED)
        if n_comp <= 1:
            continue
        areas = np.bincount(comp.ravel())[1:]
        first_pix = np.full(n_comp + 1, h * w, dtype=np.int64)
        comp_flat = comp.ravel()
        nz = np.flatnonzero(comp_flat)
        # first occurrence per component id
        for idx in nz:
            cid = comp_flat[idx]
            if first_pix[cid] == h * w:
                first_pix[cid] = idx
            if (first_pix[1:] != h * w).all():
                break
        best = max(range(1, n_comp + 1), key=lambda cid: (areas[cid - 1], -first_pix[cid]))
        for cid in range(1, n_comp + 1):
            if cid != best:
                ys, xs = np.nonzero(comp == cid)
                orphans.append((int(first_pix[cid]), ys, xs))

    orphans.sort(key=lambda t: t[0])
    for _, ys, xs in orphans:
        neighbor_labels = set()
        for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            ny = np.clip(ys + dy, 0, h - 1)
            nx = np.clip(xs + dx, 0, w - 1)
            neighbor_labels.update(int(v) for v in np.unique(out[ny, nx]))
        own = int(out[ys[0], xs[0]])
        neighbor_labels.discard(own)
        if not neighbor_labels:
            continue
        my_y = float(ys.mean())
        my_x = float(xs.mean())
        my_c = color[ys, xs].mean(axis=0)
        best_lab = None
        best_dist = None
        for cand in sorted(neighbor_labels):
            dc = float(((my_c - mean_c[cand]) ** 2).sum())
            ds = (my_y - mean_y[cand]) ** 2 + (my_x - mean_x[cand]) ** 2
            dist = dc + sw2 * ds
            if best_dist is None or dist < best_dist:
                best_dist = dist
                best_lab = cand
        out[ys, xs] = best_lab
    return out


# ---------------------------------------------------------------------------
# felzenszwalb


def felzenszwalb(
    image: Image,
    params: FelzenszwalbParams = FelzenszwalbParams(),
    backend: str | None = None,
) -> SegmentationMap:
    """Graph-based merging with the adaptive threshold tau(C) = scale/|C|.

    Edge weights are Euclidean RGB distances (byte scale) on the
    Gaussian-smoothed image over the 8-connected grid; after the threshold
    pass, components below min_size merge into their lightest-edge
    neighbor.
    """
    _check_image(image)
    impl = get_backend(backend)
    h, w = image.height, image.width
    base = image.data.astype(np.float64)
    if params.sigma > 0:
        base = smooth_rgb(base, params.sigma)

    flat = np.arange(h * w, dtype=np.int64).reshape(h, w)
    ea_parts, eb_parts, w_parts = [], [], []
    for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
        y0, y1 = max(0, -dy), h - max(0, dy)
        x0, x1 = max(0, -dx), w - max(0, dx)
        src = flat[y0:y1, x0:x1]
        dst = flat[y0 + dy : y1 + dy, x0 + dx : x1 + dx]
        diff = base[y0:y1, x0:x1] - base[y0 + dy : y1 + dy, x0 + dx : x1 + dx]
        wgt = np.sqrt((diff**2).sum(axis=2))
        ea_parts.append(src.ravel())
        eb_parts.append(dst.ravel())
        w_parts.append(wgt.ravel())
    edge_a = np.ascontiguousarray(np.concatenate(ea_parts))
    edge_b = np.ascontiguousarray(np.concatenate(eb_parts))
    weights = np.ascontiguousarray(np.concatenate(w_parts))
    order = np.ascontiguousarray(np.argsort(weights, kind="stable"))

    roots = impl.felz_merge(edge_a, edge_b, order, weights, float(params.scale), int(params.min_size), h * w)
    labels, count = _relabel_array(roots.reshape(h, w))
    return SegmentationMap(labels=labels, segment_count=count)


# ---------------------------------------------------------------------------
# shared label plumbing


def _relabel_array(arr: np.ndarray) -> tuple:
    """Map arbitrary labels to 0..m-1 by first occurrence in row-major order."""
    flat = arr.ravel()
    uniq, first_idx, inverse = np.unique(flat, return_index=True, return_inverse=True)
    rank = np.empty(len(uniq), dtype=np.int32)
    rank[np.argsort(first_idx, kind="stable")] = np.arange(len(uniq), dtype=np.int32)
    labels = rank[inverse].reshape(arr.shape)
    return labels, len(uniq)


def relabel_contiguous(seg: SegmentationMap) -> SegmentationMap:
    """Normalize labels to 0..m-1 in first-occurrence row-major order."""
    labels, count = _relabel_array(seg.labels)
    return SegmentationMap(labels=labels, segment_count=count)


def export_labels_png(seg: SegmentationMap, path) -> None:
    """Write the label field as a 16-bit grayscale PNG for inspection."""
    if seg.segment_count > 65536:
        raise ValueError(f"{seg.segment_count} segments exceed the 16-bit PNG label range")
    arr = seg.labels.astype(np.uint16)
    PILImage.fromarray(arr).save(path, format="PNG")
