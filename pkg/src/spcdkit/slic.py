"""SLIC superpixels: localized k-means in joint CIELAB + image-plane space.

The clustering distance between a pixel and a centre is

    D_s = d_lab + (m / S) * d_xy

with S = sqrt(N / k) the grid interval. Each centre only competes for pixels
inside its 2S x 2S window.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from skimage.measure import label as _label_components

from .imaging import LabImage, RgbImage, rgb_to_lab


@dataclass(frozen=True)
class SlicParams:
    k: int = 200
    m: float = 10.0
    iterations: int = 10
    min_region_fraction: float = 0.25

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.m > 0:
            raise ValueError("compactness m must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 < self.min_region_fraction < 1:
            raise ValueError("min_region_fraction must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class SuperpixelMap:
    labels: np.ndarray          # (h, w) int, ids dense in [0, count)
    centers: np.ndarray         # (count, 5): l, a, b, x, y
    step: float                 # grid interval S used for segmentation
    cost_trace: tuple = field(default=())

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        labels.setflags(write=False)
        centers = np.ascontiguousarray(self.centers, dtype=np.float64)
        centers.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "centers", centers)

    @property
    def count(self) -> int:
        return self.centers.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.count)


def grid_interval(n_pixels: int, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if n_pixels < 1:
        raise ValueError("n_pixels must be >= 1")
    return math.sqrt(n_pixels / k)


def _grid_shape(width: int, height: int, k: int) -> tuple[int, int]:
    nx = min(width, max(1, int(math.floor(math.sqrt(k * width / height) + 0.5))))
    ny = min(height, max(1, int(math.floor(k / nx + 0.5))))
    return nx, ny


def _gradient_map(lab: np.ndarray) -> np.ndarray:
    p = np.pad(lab, ((1, 1), (1, 1), (0, 0)), mode="edge")
    dx = p[1:-1, 2:] - p[1:-1, :-2]
    dy = p[2:, 1:-1] - p[:-2, 1:-1]
    return (dx ** 2).sum(axis=2) + (dy ** 2).sum(axis=2)


def _seed_centers(lab: np.ndarray, k: int):
    h, w = lab.shape[:2]
    nx, ny = _grid_shape(w, h, k)
    sx, sy = w / nx, h / ny
    gx = (np.arange(nx) + 0.5) * sx - 0.5
    gy = (np.arange(ny) + 0.5) * sy - 0.5
    perturb = min(sx, sy) >= 3
    grad = _gradient_map(lab) if perturb else None
    centers = np.empty((nx * ny, 5))
    i = 0
    for y in gy:
        for x in gx:
            ix, iy = int(math.floor(x + 0.5)), int(math.floor(y + 0.5))
            if perturb:
                best = grad[iy, ix]
                bx, by = ix, iy
                for ny_ in range(max(iy - 1, 0), min(iy + 2, h)):
                    for nx_ in range(max(ix - 1, 0), min(ix + 2, w)):
                        if grad[ny_, nx_] < best:
                            best, bx, by = grad[ny_, nx_], nx_, ny_
                if (bx, by) != (ix, iy):
                    x, y, ix, iy = float(bx), float(by), bx, by
            centers[i, :3] = lab[iy, ix]
            centers[i, 3:] = (x, y)
            i += 1
    # initial assignment: the grid cell each pixel falls in
    col = np.minimum((np.arange(w) / sx).astype(np.int64), nx - 1)
    row = np.minimum((np.arange(h) / sy).astype(np.int64), ny - 1)
    labels = row[:, None] * nx + col[None, :]
    return centers, labels


def _distance(lab, xs, ys, center, spatial_weight):
    dl = lab[..., 0] - center[0]
    da = lab[..., 1] - center[1]
    db = lab[..., 2] - center[2]
    dx = xs - center[3]
    dy = ys - center[4]
    return np.sqrt(dl * dl + da * da + db * db) + spatial_weight * np.sqrt(dx * dx + dy * dy)


def _distance_to_own(lab, xs, ys, centers, labels, spatial_weight):
    c = centers[labels]
    dl = lab[..., 0] - c[..., 0]
    da = lab[..., 1] - c[..., 1]
    db = lab[..., 2] - c[..., 2]
    dx = xs - c[..., 3]
    dy = ys - c[..., 4]
    return np.sqrt(dl * dl + da * da + db * db) + spatial_weight * np.sqrt(dx * dx + dy * dy)


def _assign(lab, xs, ys, centers, labels, step, spatial_weight):
    """One assignment sweep. A pixel only leaves its current cluster for a
    strictly closer centre, or an equally close one with a lower id."""
    h, w = labels.shape
    dist = _distance_to_own(lab, xs, ys, centers, labels, spatial_weight)
    out = labels.copy()
    for c in range(centers.shape[0]):
        cx, cy = centers[c, 3], centers[c, 4]
        x0, x1 = max(int(math.ceil(cx - step)), 0), min(int(math.floor(cx + step)), w - 1)
        y0, y1 = max(int(math.ceil(cy - step)), 0), min(int(math.floor(cy + step)), h - 1)
        if x0 > x1 or y0 > y1:
            continue
        win = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        d = _distance(lab[win], xs[win], ys[win], centers[c], spatial_weight)
        cur_d, cur_l = dist[win], out[win]
        take = (d < cur_d) | ((d == cur_d) & (c < cur_l))
        cur_d[take] = d[take]
        cur_l[take] = c
    return out, dist


def _cluster_means(lab, xs, ys, labels, count):
    flat = labels.ravel()
    n = np.bincount(flat, minlength=count).astype(np.float64)
    sums = np.stack([
        np.bincount(flat, weights=lab[..., 0].ravel(), minlength=count),
        np.bincount(flat, weights=lab[..., 1].ravel(), minlength=count),
        np.bincount(flat, weights=lab[..., 2].ravel(), minlength=count),
        np.bincount(flat, weights=xs.ravel(), minlength=count),
        np.bincount(flat, weights=ys.ravel(), minlength=count),
    ], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / n[:, None]
    return means, n


def _update(lab, xs, ys, centers, labels, spatial_weight):
    """Move centres to their cluster means, drop empty clusters.

    A centre only moves when the mean lowers its cluster's summed distance;
    the mean does not minimise a sum of (unsquared) distances, so without this
    check the total cost could creep upwards.
    """
    count = centers.shape[0]
    means, n = _cluster_means(lab, xs, ys, labels, count)
    alive = n > 0
    proposed = np.where(alive[:, None], means, centers)
    flat = labels.ravel()
    old_cost = np.bincount(flat, weights=_distance_to_own(
        lab, xs, ys, centers, labels, spatial_weight).ravel(), minlength=count)
    new_cost = np.bincount(flat, weights=_distance_to_own(
        lab, xs, ys, proposed, labels, spatial_weight).ravel(), minlength=count)
    keep_old = new_cost > old_cost
    updated = np.where(keep_old[:, None], centers, proposed)
    if not alive.all():
        remap = np.cumsum(alive) - 1
        labels = remap[labels]
        updated = updated[alive]
    return updated, labels


def enforce_connectivity(smap: SuperpixelMap, lab: LabImage,
                         min_region_fraction: float = 0.25) -> SuperpixelMap:
    """Split labels into 4-connected regions and absorb small fragments.

    Fragments smaller than ``min_region_fraction * S**2`` are merged, smallest
    first, into their largest neighbouring region. Ids are compacted in
    raster order of each region's first pixel and centres recomputed.
    """
    labels = smap.labels
    h, w = labels.shape
    min_size = min_region_fraction * smap.step ** 2
    comp = _label_components(labels, background=-1, connectivity=1) - 1
    n = int(comp.max()) + 1
    flat = comp.ravel()
    size = np.bincount(flat, minlength=n).astype(np.int64)
    _, first = np.unique(flat, return_index=True)
    comp_label = labels.ravel()[first]

    pairs = np.concatenate([
        np.stack([comp[:, :-1].ravel(), comp[:, 1:].ravel()], axis=1),
        np.stack([comp[:-1, :].ravel(), comp[1:, :].ravel()], axis=1),
    ])
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.unique(np.sort(pairs, axis=1), axis=0)

    parent = list(range(n))
    sizes = size.tolist()
    firsts = first.tolist()
    tags = comp_label.tolist()
    nbrs: list[set] = [set() for _ in range(n)]
    for a, b in pairs.tolist():
        nbrs[a].add(b)
        nbrs[b].add(a)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(a, b):
        # keep the root with the earlier first pixel
        if firsts[b] < firsts[a]:
            a, b = b, a
        parent[b] = a
        sizes[a] += sizes[b]
        if len(nbrs[a]) < len(nbrs[b]):
            nbrs[a], nbrs[b] = nbrs[b], nbrs[a]
        nbrs[a] |= nbrs[b]
        nbrs[b] = set()
        return a

    heap = [(sizes[i], firsts[i], i) for i in range(n) if sizes[i] < min_size]
    heapq.heapify(heap)
    while heap:
        sz, _, i = heapq.heappop(heap)
        if find(i) != i or sizes[i] != sz:
            continue
        around = {find(j) for j in nbrs[i]}
        around.discard(i)
        if not around:
            continue
        target = min(around, key=lambda j: (-sizes[j], firsts[j]))
        tag = tags[target]
        root = i
        for j in sorted(around, key=lambda j: firsts[j]):
            if tags[j] == tag:
                root = union(root, j)
        tags[root] = tag
        if sizes[root] < min_size:
            heapq.heappush(heap, (sizes[root], firsts[root], root))

    roots = np.array([find(i) for i in range(n)], dtype=np.int64)
    uniq = np.unique(roots)
    order = np.argsort(first[uniq], kind="stable")
    rank = np.empty(n, dtype=np.int64)
    rank[uniq[order]] = np.arange(len(uniq))
    new_labels = rank[roots][comp]

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    centers, _ = _cluster_means(lab.pixels, xs, ys, new_labels, len(uniq))
    return SuperpixelMap(new_labels, centers, smap.step, smap.cost_trace)


def segment(lab: LabImage, params: SlicParams = SlicParams()) -> SuperpixelMap:
    h, w = lab.shape
    n_pixels = h * w
    if params.k > n_pixels:
        raise ValueError(f"k={params.k} exceeds pixel count {n_pixels}")
    step = grid_interval(n_pixels, params.k)
    spatial_weight = params.m / step
    px = lab.pixels
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)

    centers, labels = _seed_centers(px, params.k)
    trace = []
    for _ in range(params.iterations):
        labels, dist = _assign(px, xs, ys, centers, labels, step, spatial_weight)
        trace.append(math.fsum(dist.ravel().tolist()))
        centers, labels = _update(px, xs, ys, centers, labels, spatial_weight)

    raw = SuperpixelMap(labels, centers, step, tuple(trace))
    return enforce_connectivity(raw, lab, params.min_region_fraction)


def superpixels(rgb: RgbImage, params: SlicParams = SlicParams()) -> SuperpixelMap:
    return segment(rgb_to_lab(rgb), params)


def paint_mean_colors(rgb: RgbImage, smap: SuperpixelMap) -> RgbImage:
    """Replace each pixel by the mean RGB colour of its superpixel."""
    if rgb.shape != smap.labels.shape:
        raise ValueError(f"image {rgb.shape} and label map {smap.labels.shape} differ")
    return RgbImage(np.clip(superpixel_means(rgb, smap)[smap.labels], 0.0, 1.0))


def superpixel_means(rgb: RgbImage, smap: SuperpixelMap) -> np.ndarray:
    """(count, 3) mean RGB per superpixel."""
    if rgb.shape != smap.labels.shape:
        raise ValueError(f"image {rgb.shape} and label map {smap.labels.shape} differ")
    flat = smap.labels.ravel()
    n = np.bincount(flat, minlength=smap.count).astype(np.float64)
    px = rgb.pixels.reshape(-1, 3)
    # offsets from each region's first pixel keep constant regions exact
    _, first = np.unique(flat, return_index=True)
    ref = px[first]
    dev = px - ref[flat]
    sums = np.stack([np.bincount(flat, weights=dev[:, c], minlength=smap.count)
                     for c in range(3)], axis=1)
    return ref + sums / n[:, None]


def boundary_mask(smap: SuperpixelMap) -> np.ndarray:
    lab = smap.labels
    edge = np.zeros(lab.shape, dtype=bool)
    edge[:, 1:] |= lab[:, 1:] != lab[:, :-1]
    edge[1:, :] |= lab[1:, :] != lab[:-1, :]
    return edge
