"""Superpixel count and runtime of SLIC over random smooth images.

    python3 scripts/slic_profile.py --n 20 --k 200 --size 256
"""

import argparse
import time

import numpy as np
from scipy.ndimage import gaussian_filter

from spcdkit.imaging import RgbImage
from spcdkit.slic import SlicParams, superpixels


def random_image(rng, size):
    sigma = rng.uniform(2, 10)
    f = gaussian_filter(rng.normal(size=(size, size, 3)), (sigma, sigma, 0))
    f = (f - f.min(axis=(0, 1))) / (np.ptp(f, axis=(0, 1)) + 1e-12)
    amp = rng.uniform(0, 0.3)
    return RgbImage(np.clip((1 - amp) * f + amp * rng.random((size, size, 3)), 0, 1))


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--k", type=int, default=200)
    p.add_argument("--m", type=float, default=10.0)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    rng = np.random.default_rng(args.seed)
    counts, times = [], []
    for _ in range(args.n):
        img = random_image(rng, args.size)
        t0 = time.perf_counter()
        smap = superpixels(img, SlicParams(k=args.k, m=args.m))
        times.append(time.perf_counter() - t0)
        counts.append(smap.count)
    print(f"count  min {min(counts)}  mean {np.mean(counts):.1f}  max {max(counts)}  (k={args.k})")
    print(f"time   mean {np.mean(times):.3f} s  max {max(times):.3f} s")


if __name__ == "__main__":
    main()
