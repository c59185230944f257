"""Image containers, decoding, CIELAB conversion and geometric primitives.

Images are stored as read-only float64 arrays of shape (height, width, 3).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

# D65 reference white, 2 degree observer
WHITE_D65 = np.array([0.95047, 1.0, 1.08883])

RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
XYZ_TO_RGB = np.linalg.inv(RGB_TO_XYZ)

_EPSILON = 216 / 24389
_KAPPA = 24389 / 27

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class ImageError(ValueError):
    """Raised for undecodable, unsupported or malformed images."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RgbImage:
    pixels: np.ndarray  # (h, w, 3), channels in [0, 1]

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ImageError(f"expected (h, w, 3) pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ImageError("zero-dimension image")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ImageError("channel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]

    def gray(self) -> np.ndarray:
        """Luminance raster 0.299R + 0.587G + 0.114B."""
        return self.pixels @ LUMA_WEIGHTS

    def to_uint8(self) -> np.ndarray:
        return np.round(self.pixels * 255.0).astype(np.uint8)

    def checksum(self) -> str:
        import hashlib

        return hashlib.sha256(self.pixels.tobytes()).hexdigest()


@dataclass(frozen=True, eq=False)
class LabImage:
    pixels: np.ndarray  # (h, w, 3) of (L*, a*, b*)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ImageError(f"expected (h, w, 3) pixels, got shape {px.shape}")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise ValueError(f"negative rect origin: {self}")
        if self.w < 1 or self.h < 1:
            raise ValueError(f"empty rect: {self}")

    def fits(self, width: int, height: int) -> bool:
        return self.x + self.w <= width and self.y + self.h <= height

    def contains(self, other: "Rect") -> bool:
        return (self.x <= other.x and self.y <= other.y
                and other.x + other.w <= self.x + self.w
                and other.y + other.h <= self.y + self.h)


def load_image(path) -> RgbImage:
    """Decode a PNG or baseline JPEG into an RgbImage with channels in [0, 1]."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ImageError(f"no such image file: {path}")
    try:
        with Image.open(path) as im:
            fmt = im.format
            if fmt not in ("PNG", "JPEG"):
                raise ImageError(f"unsupported image format {fmt!r}: {path}")
            if fmt == "JPEG" and im.info.get("progressive"):
                raise ImageError(f"progressive JPEG is not supported: {path}")
            im.load()
            if im.width < 1 or im.height < 1:
                raise ImageError(f"zero-dimension image: {path}")
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
                arr = np.repeat(arr[:, :, None], 3, axis=2)
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except ImageError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageError(f"cannot decode {path}: {exc}") from exc
    return RgbImage(np.clip(arr, 0.0, 1.0))


def save_png(img: RgbImage, path) -> None:
    """Write an 8-bit PNG (debug output only)."""
    Image.fromarray(img.to_uint8(), mode="RGB").save(os.fspath(path), format="PNG")


def _srgb_to_linear(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c):
    c = np.maximum(c, 0.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1 / 2.4) - 0.055)


def rgb_array_to_lab(rgb: np.ndarray) -> np.ndarray:
    """sRGB -> linear RGB -> XYZ (D65) -> CIELAB on an (..., 3) array."""
    xyz = _srgb_to_linear(np.asarray(rgb, dtype=np.float64)) @ RGB_TO_XYZ.T
    t = xyz / WHITE_D65
    f = np.where(t > _EPSILON, np.cbrt(t), (_KAPPA * t + 16.0) / 116.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def lab_array_to_rgb(lab: np.ndarray) -> np.ndarray:
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    t = np.where(f ** 3 > _EPSILON, f ** 3, (116.0 * f - 16.0) / _KAPPA)
    xyz = t * WHITE_D65
    return _linear_to_srgb(xyz @ XYZ_TO_RGB.T)


def rgb_to_lab(img: RgbImage) -> LabImage:
    return LabImage(rgb_array_to_lab(img.pixels))


def lab_to_rgb(img: LabImage) -> RgbImage:
    return RgbImage(np.clip(lab_array_to_rgb(img.pixels), 0.0, 1.0))


def crop(img: RgbImage, r: Rect) -> RgbImage:
    if not r.fits(img.width, img.height):
        raise ValueError(f"{r} exceeds image bounds {img.width}x{img.height}")
    return RgbImage(img.pixels[r.y:r.y + r.h, r.x:r.x + r.w])


def _interp_axis(n_src: int, n_dst: int):
    # half-pixel centres; edges clamp
    pos = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
    pos = np.clip(pos, 0.0, n_src - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_src - 1)
    return lo, hi, pos - lo


def resize(img: RgbImage, w: int, h: int) -> RgbImage:
    """Bilinear resize to (w, h)."""
    if w < 1 or h < 1:
        raise ValueError(f"target size must be positive, got {w}x{h}")
    if (w, h) == (img.width, img.height):
        return img
    px = img.pixels
    y0, y1, wy = _interp_axis(img.height, h)
    x0, x1, wx = _interp_axis(img.width, w)
    wx = wx[None, :, None]
    top = px[y0][:, x0] + wx * (px[y0][:, x1] - px[y0][:, x0])
    bot = px[y1][:, x0] + wx * (px[y1][:, x1] - px[y1][:, x0])
    out = top + wy[:, None, None] * (bot - top)
    return RgbImage(np.clip(out, 0.0, 1.0))
