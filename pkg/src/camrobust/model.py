"""Core data types and portable file formats.

Holds the image/saliency/segmentation containers every other module works
with, the dataset manifest, and the SALM tensor file format used to exchange
saliency maps with adapter processes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from PIL import Image as PILImage

from .errors import (
    BadMagic,
    DuplicateId,
    EmptyMap,
    ImageTooSmall,
    MissingFile,
    NonFiniteValue,
    SchemaViolation,
    TruncatedFile,
)

PathLike = Union[str, Path]

MIN_IMAGE_SIDE = 8

SALM_MAGIC = b"SALM"
SALM_DTYPE_FLOAT32 = 1


@dataclass(frozen=True)
class Image:
    """8-bit RGB raster. `data` has shape (height, width, 3), dtype uint8."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
            raise ValueError(f"image data must be (H, W, 3) uint8, got {arr.shape} {arr.dtype}")
        if arr.shape[0] < MIN_IMAGE_SIDE or arr.shape[1] < MIN_IMAGE_SIDE:
            raise ImageTooSmall(
                f"image is {arr.shape[1]}x{arr.shape[0]}, minimum is {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
            )
        object.__setattr__(self, "data", arr)
        self.data.setflags(write=False)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def to_float(self) -> np.ndarray:
        """Pixel values as float64 in [0, 1], shape (H, W, 3)."""
        return self.data.astype(np.float64) / 255.0

    @classmethod
    def from_float(cls, values: np.ndarray) -> "Image":
        """Clip float [0,1] values and re-quantize to bytes."""
        clipped = np.clip(values, 0.0, 1.0)
        return cls(np.rint(clipped * 255.0).astype(np.uint8))


def load_image(path: PathLike) -> Image:
    """Decode a PNG or JPEG file to 8-bit RGB.

    Grayscale inputs are replicated across channels; palette and alpha
    variants are collapsed to plain RGB.
    """
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"image file not found: {p}")
    with PILImage.open(p) as im:
        rgb = im.convert("RGB")
        arr = np.asarray(rgb, dtype=np.uint8)
    return Image(arr)


def save_image(image: Image, path: PathLike) -> None:
    """Write an image as PNG (extension decides the codec for other formats)."""
    PILImage.fromarray(image.data, mode="RGB").save(Path(path))


@dataclass(frozen=True)
class SaliencyMap:
    """Real-valued heatmap, shape (height, width), float32."""

    values: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"saliency values must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "values", arr)
        self.values.setflags(write=False)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SegmentationMap:
    """Integer label field partitioning an image into segments.

    Labels are contiguous 0..segment_count-1, each occurring at least once.
    """

    labels: np.ndarray
    segment_count: int

    def __post_init__(self):
        arr = np.ascontiguousarray(self.labels, dtype=np.int32)
        if arr.ndim != 2:
            raise ValueError(f"labels must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "labels", arr)
        self.labels.setflags(write=False)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class RankedSegments:
    """Segment ids ordered by descending mean saliency.

    `order[0]` is the most salient segment.  `means` is parallel to `order`
    and non-increasing.  `has_ties` is set when any two means were exactly
    equal and the deterministic id tie-break decided their order.
    """

    order: tuple
    means: tuple
    has_ties: bool = False

    def __len__(self) -> int:
        return len(self.order)


@dataclass(frozen=True)
class PredictionRecord:
    """A backend's class decision for one image."""

    label: int
    adapter_id: str

    def __post_init__(self):
        if self.label < 0:
            raise ValueError(f"label must be >= 0, got {self.label}")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    image_path: Path
    reference_label: Optional[int] = None


@dataclass(frozen=True)
class Manifest:
    entries: tuple = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.entries)


def load_manifest(path: PathLike) -> Manifest:
    """Load and validate a dataset manifest.

    Format: {"entries": [{"id": str, "image_path": str,
    "reference_label": int|null}]}.  Ids must be unique and every
    image_path must resolve to an existing file.  Relative image paths are
    resolved against the manifest's directory.
    """
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"manifest not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaViolation("<root>", f"not valid JSON ({exc})") from exc

    if not isinstance(raw, dict):
        raise SchemaViolation("<root>", "manifest must be a JSON object")
    entries_raw = raw.get("entries")
    if not isinstance(entries_raw, list):
        raise SchemaViolation("entries", "must be a list")

    seen = set()
    entries = []
    for i, item in enumerate(entries_raw):
        where = f"entries[{i}]"
        if not isinstance(item, dict):
            raise SchemaViolation(where, "must be an object")
        entry_id = item.get("id")
        if not isinstance(entry_id, str) or not entry_id:
            raise SchemaViolation(f"{where}.id", "must be a non-empty string")
        image_path = item.get("image_path")
        if not isinstance(image_path, str) or not image_path:
            raise SchemaViolation(f"{where}.image_path", "must be a non-empty string")
        ref = item.get("reference_label")
        if ref is not None and not isinstance(ref, int):
            raise SchemaViolation(f"{where}.reference_label", "must be an integer or null")
        if entry_id in seen:
            raise DuplicateId(entry_id)
        seen.add(entry_id)
        resolved = Path(image_path)
        if not resolved.is_absolute():
            resolved = p.parent / resolved
        if not resolved.is_file():
            raise MissingFile(f"{where}.image_path does not exist: {resolved}")
        entries.append(ManifestEntry(id=entry_id, image_path=resolved, reference_label=ref))

    return Manifest(entries=tuple(entries))


# ---------------------------------------------------------------------------
# SALM tensor files
#
# Layout: b"SALM" | u32le height | u32le width | u32le dtype (1 = float32 LE)
# followed by height*width row-major float32 values.  Bit-exact round trip.


def write_saliency(smap: SaliencyMap, path: PathLike) -> None:
    if smap.height == 0 or smap.width == 0:
        raise EmptyMap("cannot write an empty saliency map")
    values = np.asarray(smap.values, dtype="<f4")
    if not np.isfinite(values).all():
        raise NonFiniteValue("saliency map contains NaN or infinity")
    with open(path, "wb") as fh:
        fh.write(SALM_MAGIC)
        fh.write(struct.pack("<III", smap.height, smap.width, SALM_DTYPE_FLOAT32))
        fh.write(values.tobytes(order="C"))


def read_saliency(path: PathLike) -> SaliencyMap:
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"saliency file not found: {p}")
    blob = p.read_bytes()
    if len(blob) < 4 or blob[:4] != SALM_MAGIC:
        raise BadMagic(f"{p} does not start with SALM magic")
    if len(blob) < 16:
        raise TruncatedFile(f"{p} ends inside the SALM header")
    height, width, dtype_code = struct.unpack("<III", blob[4:16])
    if dtype_code != SALM_DTYPE_FLOAT32:
        raise SchemaViolation("dtype", f"unsupported SALM dtype code {dtype_code}")
    if height == 0 or width == 0:
        raise EmptyMap(f"{p} declares {height}x{width}")
    expected = 16 + height * width * 4
    if len(blob) < expected:
        raise TruncatedFile(f"{p} declares {height}x{width} but holds {(len(blob) - 16) // 4} floats")
    values = np.frombuffer(blob, dtype="<f4", count=height * width, offset=16).reshape(height, width)
    if not np.isfinite(values).all():
        raise NonFiniteValue(f"{p} contains non-finite values")
    return SaliencyMap(values=values.copy())


def normalize_saliency(smap: SaliencyMap) -> SaliencyMap:
    """Min-max normalize to [0, 1].

    A constant map has no span to normalize; it becomes all zeros and the
    result carries degenerate=True so downstream ranking can flag it.
    """
    values = smap.values
    if values.size == 0:
        raise EmptyMap("cannot normalize an empty saliency map")
    if not np.isfinite(values).all():
        raise NonFiniteValue("saliency map contains NaN or infinity")
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        return SaliencyMap(values=np.zeros_like(values), degenerate=True)
    out = (values - np.float32(lo)) / np.float32(hi - lo)
    return SaliencyMap(values=out, degenerate=False)


def upsample_bilinear(smap: SaliencyMap, target_w: int, target_h: int) -> SaliencyMap:
    """Resize with bilinear interpolation under the align-corners convention.

    Source corners map exactly onto target corners; a size-1 source axis
    extends as a constant.  Output values never leave the input's range.
    """
    if smap.height == 0 or smap.width == 0:
        raise EmptyMap("cannot upsample an empty saliency map")
    if target_w < 1 or target_h < 1:
        raise ValueError(f"target dimensions must be >= 1, got {target_w}x{target_h}")
    src = smap.values
    src_h, src_w = src.shape
    if (src_h, src_w) == (target_h, target_w):
        return SaliencyMap(values=src.copy(), degenerate=smap.degenerate)

    work = src.astype(np.float64)

    ys = np.clip(_align_corners_coords(src_h, target_h), 0.0, src_h - 1)
    xs = np.clip(_align_corners_coords(src_w, target_w), 0.0, src_w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.minimum(y0, src_h - 1 - (1 if src_h > 1 else 0))
    x0 = np.minimum(x0, src_w - 1 - (1 if src_w > 1 else 0))
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]

    top = work[np.ix_(y0, x0)] * (1.0 - wx) + work[np.ix_(y0, x1)] * wx
    bot = work[np.ix_(y1, x0)] * (1.0 - wx) + work[np.ix_(y1, x1)] * wx
    out = top * (1.0 - wy) + bot * wy
    return SaliencyMap(values=out.astype(np.float32), degenerate=smap.degenerate)


def _align_corners_coords(src: int, dst: int) -> np.ndarray:
    """Source-space sample positions for a dst-long axis, align-corners."""
    if dst == 1 or src == 1:
        return np.zeros(dst, dtype=np.float64)
    scale = (src - 1) / (dst - 1)
    return np.arange(dst, dtype=np.float64) * scale
