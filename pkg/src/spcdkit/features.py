"""Patch descriptors: superpixel colour descriptor (SPCD), LBP, HOG, colour statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .imaging import LabImage, RgbImage, rgb_to_lab
from .slic import SlicParams, SuperpixelMap, paint_mean_colors, superpixel_means, superpixels

RED_THRESHOLDS = (0.40, 0.45, 0.50, 0.55, 0.60)
BLACK_THRESHOLDS = (0.15, 0.20, 0.25, 0.30, 0.35)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    names: tuple
    values: np.ndarray
    kind: str = ""

    def __post_init__(self):
        names = tuple(self.names)
        values = np.ascontiguousarray(self.values, dtype=np.float64).ravel()
        if len(names) != values.size:
            raise ValueError(f"{len(names)} names for {values.size} values")
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")
        values.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.names)

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values.tolist()))


def _check_ladder(values, label):
    if len(values) == 0:
        raise ValueError(f"{label} must be nonempty")
    if any(not 0 < v < 1 for v in values):
        raise ValueError(f"{label} must lie in (0, 1)")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"{label} must be strictly increasing")


@dataclass(frozen=True)
class SpcdParams:
    t1_values: tuple = RED_THRESHOLDS
    t2_values: tuple = BLACK_THRESHOLDS
    k: int = 200

    def __post_init__(self):
        object.__setattr__(self, "t1_values", tuple(self.t1_values))
        object.__setattr__(self, "t2_values", tuple(self.t2_values))
        _check_ladder(self.t1_values, "t1_values")
        _check_ladder(self.t2_values, "t2_values")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class LbpParams:
    radius: int = 1
    neighbors: int = 8
    uniform: bool = True

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.neighbors < 4:
            raise ValueError("neighbors must be >= 4")


@dataclass(frozen=True)
class HogParams:
    cell_size: int = 16
    block_size: int = 2
    bins: int = 9
    eps: float = 1e-6

    def __post_init__(self):
        if self.cell_size < 1 or self.block_size < 1:
            raise ValueError("cell and block sizes must be >= 1")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")


# -- SPCD -------------------------------------------------------------------

def spcd_from_means(means: np.ndarray, params: SpcdParams = SpcdParams()) -> FeatureVector:
    """Red/black superpixel fractions from an (n, 3) array of mean colours."""
    means = np.asarray(means, dtype=np.float64)
    n = means.shape[0]
    r, g, b = means[:, 0], means[:, 1], means[:, 2]
    total = r + g + b
    values, names = [], []
    for t1 in params.t1_values:
        values.append(np.count_nonzero(r > t1 * total) / n)
        names.append(f"red_{t1:.2f}")
    dark = np.maximum(np.maximum(r, g), b)
    for t2 in params.t2_values:
        values.append(np.count_nonzero(dark < t2) / n)
        names.append(f"black_{t2:.2f}")
    return FeatureVector(names, values, "spcd")


def spcd(painted: RgbImage, smap: SuperpixelMap, params: SpcdParams = SpcdParams()) -> FeatureVector:
    if painted.shape != smap.labels.shape:
        raise ValueError(f"painted image {painted.shape} does not match label map {smap.labels.shape}")
    return spcd_from_means(superpixel_means(painted, smap), params)


def extract_spcd(rgb: RgbImage, params: SpcdParams = SpcdParams(),
                 slic_params: SlicParams | None = None) -> FeatureVector:
    """Segment, paint and describe a patch in one call."""
    if slic_params is None:
        slic_params = SlicParams(k=params.k)
    smap = superpixels(rgb, slic_params)
    return spcd(paint_mean_colors(rgb, smap), smap, params)


# -- LBP --------------------------------------------------------------------

@lru_cache(maxsize=None)
def uniform_mapping(neighbors: int) -> np.ndarray:
    """Code -> bin lookup; uniform codes get their own bins in ascending
    code order, every non-uniform code shares the final bin."""
    n_codes = 1 << neighbors
    mapping = np.empty(n_codes, dtype=np.int64)
    next_bin = 0
    n_bins = neighbors * (neighbors - 1) + 3
    for code in range(n_codes):
        bits = [(code >> i) & 1 for i in range(neighbors)]
        transitions = sum(bits[i] != bits[(i + 1) % neighbors] for i in range(neighbors))
        if transitions <= 2:
            mapping[code] = next_bin
            next_bin += 1
        else:
            mapping[code] = n_bins - 1
    assert next_bin == n_bins - 1
    mapping.setflags(write=False)
    return mapping


def _neighbor_offsets(radius: int, neighbors: int):
    angles = 2 * np.pi * np.arange(neighbors) / neighbors
    dy = np.round(-radius * np.sin(angles), 9)
    dx = np.round(radius * np.cos(angles), 9)
    return dy, dx


def lbp_codes(gray: np.ndarray, params: LbpParams = LbpParams()) -> np.ndarray:
    """Raw LBP code for every pixel at least ``radius`` from the border."""
    gray = np.asarray(gray, dtype=np.float64)
    r = params.radius
    h, w = gray.shape
    if h < 2 * r + 1 or w < 2 * r + 1:
        raise ValueError(f"image {w}x{h} too small for radius {r}")
    center = gray[r:h - r, r:w - r]
    codes = np.zeros(center.shape, dtype=np.int64)
    for bit, (dy, dx) in enumerate(zip(*_neighbor_offsets(r, params.neighbors))):
        y0, x0 = int(np.floor(dy)), int(np.floor(dx))
        fy, fx = dy - y0, dx - x0

        def shifted(oy, ox):
            return gray[r + oy:h - r + oy, r + ox:w - r + ox]

        sample = shifted(y0, x0) * (1 - fy) * (1 - fx)
        if fx:
            sample = sample + shifted(y0, x0 + 1) * (1 - fy) * fx
        if fy:
            sample = sample + shifted(y0 + 1, x0) * fy * (1 - fx)
        if fx and fy:
            sample = sample + shifted(y0 + 1, x0 + 1) * fy * fx
        codes |= (sample >= center).astype(np.int64) << bit
    return codes


def lbp_histogram(gray: np.ndarray, params: LbpParams = LbpParams()) -> FeatureVector:
    codes = lbp_codes(gray, params).ravel()
    if params.uniform:
        mapping = uniform_mapping(params.neighbors)
        n_bins = params.neighbors * (params.neighbors - 1) + 3
        codes = mapping[codes]
    else:
        n_bins = 1 << params.neighbors
    hist = np.bincount(codes, minlength=n_bins).astype(np.float64)
    hist /= hist.sum()
    return FeatureVector([f"bin_{i:03d}" for i in range(n_bins)], hist, "lbp")


# -- HOG --------------------------------------------------------------------

def _gradients(gray):
    p = np.pad(gray, 1, mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    return gx, gy


def cell_histograms(gray: np.ndarray, params: HogParams = HogParams()) -> np.ndarray:
    """(cells_y, cells_x, bins) orientation histograms, unsigned, with each
    vote split linearly between the two nearest bin centres."""
    gray = np.asarray(gray, dtype=np.float64)
    h, w = gray.shape
    c = params.cell_size
    if h % c or w % c:
        raise ValueError(f"image {w}x{h} not divisible by cell size {c}")
    gx, gy = _gradients(gray)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    width = 180.0 / params.bins
    pos = ang / width - 0.5
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(np.int64) % params.bins
    hi = (lo + 1) % params.bins
    ncy, ncx = h // c, w // c
    cell = (np.arange(h) // c)[:, None] * ncx + (np.arange(w) // c)[None, :]
    size = ncy * ncx * params.bins
    hist = (np.bincount((cell * params.bins + lo).ravel(), weights=(mag * (1 - frac)).ravel(), minlength=size)
            + np.bincount((cell * params.bins + hi).ravel(), weights=(mag * frac).ravel(), minlength=size))
    return hist.reshape(ncy, ncx, params.bins)


def hog_descriptor(gray: np.ndarray, params: HogParams = HogParams()) -> FeatureVector:
    cells = cell_histograms(gray, params)
    ncy, ncx, _ = cells.shape
    b = params.block_size
    if ncy < b or ncx < b:
        raise ValueError("image smaller than one block")
    blocks = []
    for by in range(ncy - b + 1):
        for bx in range(ncx - b + 1):
            v = cells[by:by + b, bx:bx + b].ravel()
            blocks.append(v / np.sqrt(v @ v + params.eps ** 2))
    values = np.concatenate(blocks)
    return FeatureVector([f"f_{i:05d}" for i in range(values.size)], values, "hog")


# -- colour statistics ------------------------------------------------------

# (offset, span) mapping each channel's nominal range onto [0, 1]
_CHANNEL_SCALE = {
    "R": (0.0, 1.0), "G": (0.0, 1.0), "B": (0.0, 1.0),
    "L": (0.0, 100.0), "a": (-128.0, 255.0), "b": (-128.0, 255.0),
}


def color_stats(rgb: RgbImage, lab: LabImage | None = None) -> FeatureVector:
    if lab is None:
        lab = rgb_to_lab(rgb)
    if rgb.shape != lab.shape:
        raise ValueError(f"rgb {rgb.shape} and lab {lab.shape} differ")
    channels = np.concatenate([rgb.pixels, lab.pixels], axis=2).reshape(-1, 6)
    names, values = [], []
    for i, ch in enumerate("RGBLab"):
        lo, span = _CHANNEL_SCALE[ch]
        x = np.clip((channels[:, i] - lo) / span, 0.0, 1.0)
        dev = x - x[0]   # constant channels stay exact
        names += [f"{ch}_mean", f"{ch}_std"]
        values += [x[0] + dev.mean(), dev.std()]
    return FeatureVector(names, values, "color")


def compose(parts: Sequence[FeatureVector]) -> FeatureVector:
    """Concatenate descriptors in order, prefixing names with each part's kind."""
    if not parts:
        raise ValueError("nothing to compose")
    names, values = [], []
    for p in parts:
        names += [f"{p.kind}.{n}" if p.kind else n for n in p.names]
        values.append(p.values)
    if len(set(names)) != len(names):
        raise ValueError("duplicate feature names after prefixing")
    return FeatureVector(names, np.concatenate(values))


FEATURE_KINDS = ("spcd", "lbp", "hog", "color")


def patch_features(rgb: RgbImage, kinds: Sequence[str] = ("spcd",),
                   spcd_params: SpcdParams = SpcdParams(),
                   slic_params: SlicParams | None = None,
                   lbp_params: LbpParams = LbpParams(),
                   hog_params: HogParams = HogParams()) -> FeatureVector:
    """The per-patch feature vector for the selected descriptor kinds, in
    the canonical order spcd, lbp, hog, color."""
    unknown = set(kinds) - set(FEATURE_KINDS)
    if unknown or not kinds:
        raise ValueError(f"unknown or empty feature kinds: {sorted(unknown) or kinds}")
    parts = []
    if "spcd" in kinds:
        parts.append(extract_spcd(rgb, spcd_params, slic_params))
    if "lbp" in kinds:
        parts.append(lbp_histogram(rgb.gray(), lbp_params))
    if "hog" in kinds:
        parts.append(hog_descriptor(rgb.gray(), hog_params))
    if "color" in kinds:
        parts.append(color_stats(rgb))
    return compose(parts)
