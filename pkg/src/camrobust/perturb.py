"""Deterministic, seeded image perturbations.

Implements the seven natural perturbation kinds locally; adversarial kinds
(FGSM, PGD, CW) are only described here — their pixels come from the model
adapter because they need gradients.

All kinds work the same way: convert to float [0,1], perturb, clip, and
re-quantize to bytes.  Randomized kinds draw from a counter-based Philox
generator keyed by the spec's seed, so results are reproducible and
independent of evaluation order.
"""

from __future__ import annotations

import enum
import hashlib
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image as PILImage

from ._filters import convolve_reflect, gaussian_kernel_2d
from .errors import AdversarialNotLocal, NoParameterForKind, UnsupportedKind
from .model import Image


class PerturbKind(enum.Enum):
    GAUSSIAN = "gaussian"
    SALT_PEPPER = "saltpepper"
    POISSON = "poisson"
    SPECKLE = "speckle"
    GAUSSIAN_BLUR = "gaussianblur"
    MOTION_BLUR = "motionblur"
    JPEG = "jpeg"
    FGSM = "fgsm"
    PGD = "pgd"
    CW = "cw"

    @property
    def is_adversarial(self) -> bool:
        return self in (PerturbKind.FGSM, PerturbKind.PGD, PerturbKind.CW)


class Level(enum.Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


# severity parameter per kind and level; Poisson and CW take none
_PARAM_TABLE = {
    PerturbKind.GAUSSIAN: ("var", {Level.LOW: 0.0005, Level.MEDIUM: 0.006, Level.HIGH: 0.01}),
    PerturbKind.SALT_PEPPER: ("amount", {Level.LOW: 0.0005, Level.MEDIUM: 0.006, Level.HIGH: 0.01}),
    PerturbKind.SPECKLE: ("var", {Level.LOW: 0.0005, Level.MEDIUM: 0.006, Level.HIGH: 0.01}),
    PerturbKind.GAUSSIAN_BLUR: ("sigma", {Level.LOW: 0.1, Level.MEDIUM: 0.3, Level.HIGH: 0.5}),
    PerturbKind.MOTION_BLUR: ("ksize", {Level.LOW: 1, Level.MEDIUM: 5, Level.HIGH: 15}),
    PerturbKind.JPEG: ("quality", {Level.LOW: 80, Level.MEDIUM: 50, Level.HIGH: 10}),
    PerturbKind.FGSM: ("eps", {Level.LOW: 0.01, Level.MEDIUM: 0.02, Level.HIGH: 0.1}),
    PerturbKind.PGD: ("eps", {Level.LOW: 0.01, Level.MEDIUM: 0.03, Level.HIGH: 0.1}),
}


def resolve_level(kind: PerturbKind, level: Level) -> dict:
    """Severity parameter for (kind, level), e.g. (GAUSSIAN, HIGH) -> {"var": 0.01}."""
    if kind not in _PARAM_TABLE:
        raise NoParameterForKind(
            f"{kind.value!r} takes no severity level; use the bare spec string {kind.value!r}"
        )
    name, by_level = _PARAM_TABLE[kind]
    return {name: by_level[level]}


@dataclass(frozen=True)
class PerturbationSpec:
    """A fully resolved perturbation: kind, optional level, parameters, seed."""

    kind: PerturbKind
    level: Optional[Level] = None
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind in _PARAM_TABLE and self.level is None and not self.params:
            raise ValueError(f"{self.kind.value!r} requires a level or explicit params")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must fit in 64 unsigned bits")

    @classmethod
    def resolve(cls, kind: PerturbKind, level: Optional[Level] = None, seed: int = 0) -> "PerturbationSpec":
        if kind in _PARAM_TABLE:
            if level is None:
                raise ValueError(f"{kind.value!r} requires a level")
            return cls(kind=kind, level=level, params=resolve_level(kind, level), seed=seed)
        if level is not None:
            raise NoParameterForKind(
                f"{kind.value!r} takes no severity level; use the bare spec string {kind.value!r}"
            )
        return cls(kind=kind, level=None, params={}, seed=seed)

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "PerturbationSpec":
        """Parse a CLI spec string like "gaussian:medium", "jpeg:high", "poisson"."""
        parts = text.strip().lower().split(":")
        if len(parts) > 2 or not parts[0]:
            raise UnsupportedKind(f"malformed perturbation spec {text!r}")
        try:
            kind = PerturbKind(parts[0])
        except ValueError:
            known = ", ".join(k.value for k in PerturbKind)
            raise UnsupportedKind(f"unknown perturbation kind {parts[0]!r} (known: {known})") from None
        level = None
        if len(parts) == 2:
            try:
                level = Level(parts[1])
            except ValueError:
                raise UnsupportedKind(f"unknown level {parts[1]!r} in {text!r} (low|medium|high)") from None
        return cls.resolve(kind, level, seed=seed)

    def canonical(self) -> str:
        """Spec string form: "gaussian:medium", "poisson"."""
        if self.level is None:
            return self.kind.value
        return f"{self.kind.value}:{self.level.value}"

    def with_seed(self, seed: int) -> "PerturbationSpec":
        return PerturbationSpec(kind=self.kind, level=self.level, params=self.params, seed=seed)


def derive_seed(global_seed: int, image_id: str, spec_string: str) -> int:
    """Stable 64-bit seed for one (image, spec) pair.

    Hash-derived so per-image work is order-independent under parallel
    evaluation: the draw for an image never depends on which images ran
    before it.
    """
    digest = hashlib.sha256(f"{global_seed}|{image_id}|{spec_string}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def apply_perturbation(image: Image, spec: PerturbationSpec) -> Image:
    """Apply one natural perturbation; output has identical dimensions."""
    if spec.kind.is_adversarial:
        raise AdversarialNotLocal(
            f"{spec.kind.value!r} requires model gradients; request it through the adapter"
        )
    x = image.to_float()
    kind = spec.kind
    if kind is PerturbKind.GAUSSIAN:
        rng = _generator(spec.seed)
        out = x + rng.normal(0.0, math.sqrt(spec.params["var"]), size=x.shape)
    elif kind is PerturbKind.SALT_PEPPER:
        out = _salt_pepper(x, spec.params["amount"], _generator(spec.seed))
    elif kind is PerturbKind.POISSON:
        out = _poisson(image, x, _generator(spec.seed))
    elif kind is PerturbKind.SPECKLE:
        rng = _generator(spec.seed)
        out = x + x * rng.normal(0.0, math.sqrt(spec.params["var"]), size=x.shape)
    elif kind is PerturbKind.GAUSSIAN_BLUR:
        kernel = gaussian_kernel_2d(spec.params["sigma"])
        out = np.stack([convolve_reflect(x[:, :, c], kernel) for c in range(3)], axis=2)
    elif kind is PerturbKind.MOTION_BLUR:
        ksize = int(spec.params["ksize"])
        if ksize < 1:
            raise ValueError(f"ksize must be >= 1, got {ksize}")
        if ksize == 1:
            return Image(image.data.copy())
        kernel = np.full((1, ksize), 1.0 / ksize)
        out = np.stack([convolve_reflect(x[:, :, c], kernel) for c in range(3)], axis=2)
    elif kind is PerturbKind.JPEG:
        return _jpeg_roundtrip(image, int(spec.params["quality"]))
    else:
        raise UnsupportedKind(f"no local implementation for kind {kind!r}")
    return Image.from_float(out)


def _salt_pepper(x: np.ndarray, amount: float, rng: np.random.Generator) -> np.ndarray:
    """Set round(amount*H*W) distinct pixels (all channels) to 0 or 1."""
    h, w, _ = x.shape
    k = int(round(amount * h * w))
    out = x.copy()
    if k == 0:
        return out
    flat_choice = rng.choice(h * w, size=k, replace=False)
    salt = rng.random(k) < 0.5
    rows, cols = np.unravel_index(flat_choice, (h, w))
    out[rows, cols, :] = salt[:, None].astype(np.float64)
    return out


def _poisson(image: Image, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Poisson resampling scaled to the image's intensity-level count."""
    n_levels = len(np.unique(image.data))
    vals = 2 ** math.ceil(math.log2(max(n_levels, 1))) if n_levels > 1 else 1
    return rng.poisson(x * vals).astype(np.float64) / vals


def _jpeg_roundtrip(image: Image, quality: int) -> Image:
    buf = io.BytesIO()
    PILImage.fromarray(image.data, mode="RGB").save(buf, format="JPEG", quality=quality)
    buf.seek(0)
    with PILImage.open(buf) as im:
        decoded = np.asarray(im.convert("RGB"), dtype=np.uint8)
    if decoded.shape != image.data.shape:
        raise UnsupportedKind("JPEG round-trip changed dimensions")
    return Image(decoded)
