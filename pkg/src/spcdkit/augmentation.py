"""Natural data augmentation.

Square crops around a wound ROI at several magnifications, each resized to a
fixed patch size, then optionally pushed through one geometric or photometric
transform. All randomness comes from seeds derived from (base seed, record id,
magnification index, transform index), so adding records never changes the
patches of existing ones.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .imaging import Rect, RgbImage, crop, resize

STOCHASTIC = frozenset({"gaussian_noise", "salt_pepper"})

# kind -> (default magnitude, validator)
_MAGNITUDES = {
    "mirror": (None, lambda v: v is None),
    "rotate45": (45.0, lambda v: v == 45),
    "rotate90": (90.0, lambda v: v == 90),
    "gaussian_noise": (0.05, lambda v: 0 < v <= 0.1),
    "salt_pepper": (0.02, lambda v: 0 < v <= 0.05),
    "translate": (0.1, lambda v: 0 < abs(v) <= 0.2),
    "shear": (0.2, lambda v: 0 < abs(v) <= 0.3),
    "contrast": (1.3, lambda v: 0.5 <= v <= 1.5),
    "sharpen": (0.5, lambda v: 0 < v <= 1),
}
TRANSFORM_KINDS = tuple(_MAGNITUDES)


class AugmentationError(ValueError):
    pass


@dataclass(frozen=True)
class MagnificationPolicy:
    factors: tuple = (1.25, 1.75, 2.5)
    output_size: int = 256

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(float(f) for f in self.factors))
        if not self.factors:
            raise ValueError("at least one magnification factor is required")
        if any(f < 1 for f in self.factors):
            raise ValueError("magnification factors must be >= 1")
        if any(b <= a for a, b in zip(self.factors, self.factors[1:])):
            raise ValueError("magnification factors must be strictly increasing")
        if self.output_size < 32:
            raise ValueError("output_size must be >= 32")


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    magnitude: float | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in _MAGNITUDES:
            raise AugmentationError(f"unknown transform kind {self.kind!r}")
        if self.magnitude is None and self.kind != "mirror":
            object.__setattr__(self, "magnitude", _MAGNITUDES[self.kind][0])
        if not _MAGNITUDES[self.kind][1](self.magnitude):
            raise AugmentationError(f"magnitude {self.magnitude!r} out of range for {self.kind}")

    @property
    def stochastic(self) -> bool:
        return self.kind in STOCHASTIC

    @property
    def tag(self) -> str:
        return self.kind if self.magnitude is None else f"{self.kind}{self.magnitude:g}"


# The seven panels of the magnification-then-transform figure.
DEFAULT_TRANSFORMS = (
    TransformSpec("mirror"),
    TransformSpec("rotate45"),
    TransformSpec("rotate90"),
    TransformSpec("gaussian_noise"),
    TransformSpec("salt_pepper"),
    TransformSpec("translate"),
    TransformSpec("shear"),
)


def magnification_rect(width: int, height: int, roi: Rect, factor: float) -> Rect:
    """Crop window of side factor * max(roi.w, roi.h) centred on the ROI.

    The window is shifted to stay inside the image and only shrinks along an
    axis where it is longer than the image. It always contains the ROI.
    """
    if not roi.fits(width, height):
        raise AugmentationError(f"{roi} lies outside the {width}x{height} image")
    side = int(math.ceil(factor * max(roi.w, roi.h) - 1e-9))
    sides = []
    origin = []
    for start, extent, limit in ((roi.x, roi.w, width), (roi.y, roi.h, height)):
        s = min(side, limit)
        o = int(math.floor(start + extent / 2 - s / 2))
        o = max(min(o, start), start + extent - s)
        o = min(max(o, 0), limit - s)
        sides.append(s)
        origin.append(o)
    return Rect(origin[0], origin[1], sides[0], sides[1])


def natural_magnify(img: RgbImage, roi: Rect,
                    policy: MagnificationPolicy = MagnificationPolicy()) -> list[RgbImage]:
    out = []
    for f in policy.factors:
        r = magnification_rect(img.width, img.height, roi, f)
        out.append(resize(crop(img, r), policy.output_size, policy.output_size))
    return out


def _affine(px: np.ndarray, matrix: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """Apply an output->input (row, col) affine map with reflected borders."""
    out = np.empty_like(px)
    for c in range(3):
        out[..., c] = ndimage.affine_transform(px[..., c], matrix, offset=offset,
                                               order=1, mode="reflect")
    return out


def _about_center(px, matrix):
    center = (np.array(px.shape[:2], dtype=np.float64) - 1) / 2
    return _affine(px, matrix, center - matrix @ center)


def transform(img: RgbImage, spec: TransformSpec) -> RgbImage:
    if spec.stochastic and spec.seed is None:
        raise AugmentationError(f"{spec.kind} needs a seed")
    if not spec.stochastic and spec.seed is not None:
        raise AugmentationError(f"{spec.kind} is deterministic and takes no seed")
    px = img.pixels
    h, w = img.shape
    kind, mag = spec.kind, spec.magnitude
    if kind == "mirror":
        out = px[:, ::-1]
    elif kind == "rotate90" and h == w:
        out = np.rot90(px, k=1, axes=(0, 1))
    elif kind in ("rotate45", "rotate90"):
        t = math.radians(mag)
        rot = np.array([[math.cos(t), math.sin(t)], [-math.sin(t), math.cos(t)]])
        out = _about_center(px, rot)
    elif kind == "translate":
        out = _affine(px, np.eye(2), np.array([-round(mag * h), -round(mag * w)], dtype=np.float64))
    elif kind == "shear":
        out = _about_center(px, np.array([[1.0, 0.0], [mag, 1.0]]))
    elif kind == "contrast":
        mean = px.mean()
        out = mean + mag * (px - mean)
    elif kind == "sharpen":
        blur = ndimage.uniform_filter(px, size=(3, 3, 1), mode="reflect")
        out = px + mag * (px - blur)
    elif kind == "gaussian_noise":
        rng = np.random.default_rng(spec.seed)
        out = px + rng.normal(0.0, mag, size=px.shape)
    elif kind == "salt_pepper":
        rng = np.random.default_rng(spec.seed)
        u = rng.random(px.shape[:2])
        out = px.copy()
        out[u < mag / 2] = 0.0
        out[(u >= mag / 2) & (u < mag)] = 1.0
    else:  # pragma: no cover - guarded by TransformSpec
        raise AugmentationError(kind)
    return RgbImage(np.clip(out, 0.0, 1.0))


def derive_seed(base_seed: int, record_id: str, factor_index: int, spec_index: int) -> int:
    key = f"{base_seed}|{record_id}|{factor_index}|{spec_index}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big") >> 1


@dataclass(frozen=True)
class Provenance:
    source_id: str          # the foot image; the grouping key for fold plans
    record_id: str          # the ROI record within that image
    factor_index: int
    factor: float
    variant_index: int      # 0 = magnification only
    transform: str
    seed: int | None = None

    @property
    def patch_name(self) -> str:
        return f"{self.record_id}_{self.factor:g}_{self.transform}"


@dataclass(frozen=True, eq=False)
class AugmentedPatch:
    patch: RgbImage
    provenance: Provenance


def augment_record(img: RgbImage, roi: Rect,
                   policy: MagnificationPolicy = MagnificationPolicy(),
                   specs: Sequence[TransformSpec] = DEFAULT_TRANSFORMS,
                   base_seed: int = 0, source_id: str = "image",
                   record_id: str | None = None,
                   selection=None) -> list[AugmentedPatch]:
    """Magnification crops crossed with (identity + specs).

    ``selection`` optionally restricts output to a set of
    (factor_index, variant_index) pairs, variant 0 being the plain crop.
    """
    record_id = source_id if record_id is None else record_id
    wanted = None if selection is None else set(selection)
    crops = natural_magnify(img, roi, policy)
    out = []
    for fi, (factor, base) in enumerate(zip(policy.factors, crops)):
        for vi in range(len(specs) + 1):
            if wanted is not None and (fi, vi) not in wanted:
                continue
            if vi == 0:
                prov = Provenance(source_id, record_id, fi, factor, 0, "identity")
                out.append(AugmentedPatch(base, prov))
                continue
            spec = specs[vi - 1]
            seed = derive_seed(base_seed, record_id, fi, vi) if spec.stochastic else None
            spec = replace(spec, seed=seed)
            prov = Provenance(source_id, record_id, fi, factor, vi, spec.tag, seed)
            out.append(AugmentedPatch(transform(base, spec), prov))
    return out


# -- class balancing --------------------------------------------------------

@dataclass(frozen=True)
class ClassPlan:
    label: object
    n_records: int
    selections: tuple = field(repr=False)  # per record: tuple of (factor_index, variant_index)

    @property
    def total(self) -> int:
        return sum(len(s) for s in self.selections)


def plan_balance(counts: Mapping, n_factors: int = 3, n_variants: int = 1 + len(DEFAULT_TRANSFORMS),
                 target: int | None = None, mode: str = "exact", seed: int = 0) -> dict:
    """Plan how many augmented patches each record contributes so that
    every class reaches ``target`` patches.

    ``n_variants`` counts the plain crop plus each transform. The minority
    class receives every (magnification, variant) pair, and by default sets
    the target. Other classes always receive all plain magnification crops;
    in ``"exact"`` mode the shortfall is filled with a seeded sample of
    transformed crops, in ``"full"`` mode whole variants are added per record
    so counts agree to within one record-set multiple.
    """
    if mode not in ("exact", "full"):
        raise ValueError(f"unknown balancing mode {mode!r}")
    if not counts or any(c < 1 for c in counts.values()):
        raise ValueError("every class needs at least one record")
    if n_factors < 1 or n_variants < 1:
        raise ValueError("n_factors and n_variants must be >= 1")
    minority = min(counts, key=lambda k: (counts[k], str(k)))
    if target is None:
        target = counts[minority] * n_factors * n_variants
    plans = {}
    for ci, (cls, n) in enumerate(sorted(counts.items(), key=lambda kv: str(kv[0]))):
        capacity = n * n_factors * n_variants
        if target > capacity:
            raise ValueError(f"class {cls!r}: target {target} exceeds capacity {capacity}")
        plain = [[(f, 0) for f in range(n_factors)] for _ in range(n)]
        if mode == "full" or cls == minority and target == capacity:
            per = n_variants if target == capacity else max(1, min(n_variants, target // (n * n_factors)))
            sel = [[(f, v) for f in range(n_factors) for v in range(per)] for _ in range(n)]
        else:
            rng = np.random.default_rng([seed, ci])
            base = n * n_factors
            if base >= target:
                pick = np.sort(rng.choice(base, size=target, replace=False))
                sel = [[] for _ in range(n)]
                for p in pick.tolist():
                    sel[p // n_factors].append((p % n_factors, 0))
            else:
                sel = plain
                extra_slots = n * n_factors * (n_variants - 1)
                pick = np.sort(rng.choice(extra_slots, size=target - base, replace=False))
                for p in pick.tolist():
                    rec, rest = divmod(p, n_factors * (n_variants - 1))
                    f, v = divmod(rest, n_variants - 1)
                    sel[rec].append((f, v + 1))
                sel = [sorted(s) for s in sel]
        plans[cls] = ClassPlan(cls, n, tuple(tuple(s) for s in sel))
    return plans
