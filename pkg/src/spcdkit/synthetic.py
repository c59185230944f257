"""Synthetic wound-image corpus for end-to-end experiments.

Class 0: a red wound blob on skin-toned background, no dark tissue.
Class 1: the same, plus several near-black blobs inside the wound.
The ``ischaemia`` column carries the class; ``infection`` is a seeded coin
flip with no visual signal.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

SKIN = np.array([0.86, 0.66, 0.54])
WOUND = np.array([0.76, 0.16, 0.13])


def _ellipse(h, w, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def wound_image(rng: np.random.Generator, dark: bool, size: int = 320):
    """Return (pixels, roi) with roi = (x, y, w, h) bounding the wound."""
    h = w = size
    shade = gaussian_filter(rng.normal(0, 1, (h, w)), 12)
    shade = 0.05 * shade / (np.abs(shade).max() + 1e-12)
    img = SKIN[None, None, :] * (1 + shade[..., None]) + rng.normal(0, 0.01, (h, w, 3))

    cy, cx = rng.uniform(0.38 * size, 0.62 * size, 2)
    ry, rx = rng.uniform(0.10 * size, 0.16 * size, 2)
    wound = _ellipse(h, w, cy, cx, ry, rx)
    tint = WOUND + rng.uniform(-0.04, 0.04, 3)
    img[wound] = tint + rng.normal(0, 0.02, (int(wound.sum()), 3))

    if dark:
        for _ in range(int(rng.integers(2, 5))):
            r = rng.uniform(0.045, 0.07) * size
            oy, ox = rng.uniform(-0.5, 0.5, 2)
            blob = _ellipse(h, w, cy + oy * ry, cx + ox * rx, r, r * rng.uniform(0.8, 1.25))
            level = rng.uniform(0.03, 0.08)
            img[blob] = level + rng.normal(0, 0.01, (int(blob.sum()), 3))

    img = np.clip(img, 0.0, 1.0)
    x0, y0 = int(max(cx - rx - 4, 0)), int(max(cy - ry - 4, 0))
    x1, y1 = int(min(cx + rx + 5, w)), int(min(cy + ry + 5, h))
    return img, (x0, y0, x1 - x0, y1 - y0)


def generate_corpus(out_dir, n_images: int = 200, seed: int = 0, size: int = 320) -> Path:
    """Write ``n_images`` PNGs (half per class) and ``manifest.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(n_images):
        rng = np.random.default_rng([seed, i])
        dark = i % 2 == 1
        px, (x, y, w, h) = wound_image(rng, dark, size)
        name = f"img{i:04d}.png"
        Image.fromarray(np.round(px * 255).astype(np.uint8), mode="RGB").save(out_dir / name, format="PNG")
        rows.append([f"img{i:04d}", name, x, y, w, h, int(dark), int(rng.integers(0, 2))])
    path = out_dir / "manifest.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["image_id", "image_path", "roi_x", "roi_y", "roi_w", "roi_h", "ischaemia", "infection"])
        wr.writerows(rows)
    return path
