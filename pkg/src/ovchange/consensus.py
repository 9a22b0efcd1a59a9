"""Gated fusion of semantic deltas with the structure gate, then regional pooling.

The fused score is clipped to [0, 1] and averaged within SLIC superpixels
computed on the average of the two input images, which enforces local
agreement without injecting new evidence.

The SLIC implementation pins every free choice so that an independently
written per-pixel reference produces identical labels:

* CIELAB via the D65 sRGB matrix below, image values in [0, 255];
* a grid of ny = round(sqrt(n*H/W)) rows by nx = round(n/ny) columns
  (each at least 1, so row/column spacing is sqrt(H*W/n) up to
  rounding), centers at floor((i+0.5)*H/ny) x floor((j+0.5)*W/nx);
* centers perturbed to the lowest-gradient pixel of their 3x3
  neighborhood (row-major scan, strict less keeps the first minimum);
* per iteration: distances reset to +inf, centers visited in index
  order, each searching a window of half-width s around its position;
  d = sqrt(dlab^2 + (compactness/s)^2 * dxy^2), strict less updates, so
  the lowest center index wins ties;
* center update averages lab and position over members in row-major
  pixel order; empty clusters keep their previous state;
* pixels left uncovered by every window are assigned to the nearest
  center under the same metric;
* 4-connected fragments smaller than min_region_fraction * (H*W /
  n_segments) are merged into their largest adjacent region (repeating
  until stable, smallest fragment id first, ties to the lowest id), and
  labels are renumbered 0..n-1 by first row-major occurrence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError, TooManySegmentsError

# sRGB -> XYZ (D65) and the CIELAB white point
_RGB_TO_XYZ = (
    (0.4124564, 0.3575761, 0.1804375),
    (0.2126729, 0.7151522, 0.0721750),
    (0.0193339, 0.1191920, 0.9503041),
)
_WHITE = (0.95047, 1.0, 1.08883)
_LAB_DELTA = 6.0 / 29.0


@dataclass(frozen=True)
class FusionConfig:
    """Weights of the gated-fusion formula."""

    additive_weight: float = 0.1  # compensation where structure changes alone
    gate_strength: float = 0.7  # how much the gate modulates the delta
    gate_exponent: float = 1.0

    def __post_init__(self):
        if self.additive_weight < 0.0:
            raise ValueError("additive_weight must be >= 0")
        if not 0.0 <= self.gate_strength <= 1.0:
            raise ValueError("gate_strength must be in [0, 1]")
        if self.gate_exponent < 0.0:
            raise ValueError("gate_exponent must be >= 0")


@dataclass(frozen=True)
class SlicConfig:
    """Superpixel segmentation parameters.

    ``n_segments`` of None scales the 512x512 default of 256 by pixel count.
    """

    n_segments: int | None = None
    compactness: float = 10.0
    iterations: int = 10
    min_region_fraction: float = 0.25

    def __post_init__(self):
        if self.n_segments is not None and self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")

    def resolved_segments(self, height: int, width: int) -> int:
        if self.n_segments is not None:
            return self.n_segments
        return max(1, int(round(256 * (height * width) / float(512 * 512))))


def fuse(
    delta: np.ndarray,
    gate_map: np.ndarray,
    cfg: FusionConfig,
    additive_enabled: bool = True,
) -> np.ndarray:
    """delta * ((1-beta) + beta*gate^gamma) + alpha*gate^gamma, element-wise."""
    if delta.shape != gate_map.shape:
        raise ShapeMismatchError(f"delta {delta.shape} vs gate {gate_map.shape}")
    alpha = cfg.additive_weight if additive_enabled else 0.0
    beta = cfg.gate_strength
    g = np.asarray(gate_map, dtype=np.float64) ** cfg.gate_exponent
    return np.asarray(delta, dtype=np.float64) * ((1.0 - beta) + beta * g) + alpha * g


def clip_unit(score: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1]; only the additive fusion term can push above 1."""
    return np.clip(score, 0.0, 1.0)


def average_image(image_a: np.ndarray, image_b: np.ndarray) -> np.ndarray:
    """Per-channel mean of the two dates, kept in float."""
    if image_a.shape != image_b.shape:
        raise ShapeMismatchError(f"images differ: {image_a.shape} vs {image_b.shape}")
    return (
        image_a.astype(np.float64, copy=False) + image_b.astype(np.float64, copy=False)
    ) / 2.0


def rgb_to_lab(image: np.ndarray) -> np.ndarray:
    """Convert an (H, W, 3) image with values in [0, 255] to CIELAB (D65)."""
    srgb = np.clip(image.astype(np.float64, copy=False) / 255.0, 0.0, 1.0)
    linear = np.where(srgb <= 0.04045, srgb / 12.92, ((srgb + 0.055) / 1.055) ** 2.4)
    r, g, b = linear[..., 0], linear[..., 1], linear[..., 2]
    out = np.empty_like(linear)
    fxyz = []
    for row, white in zip(_RGB_TO_XYZ, _WHITE):
        t = (row[0] * r + row[1] * g + row[2] * b) / white
        fxyz.append(
            np.where(
                t > _LAB_DELTA**3,
                t ** (1.0 / 3.0),
                t / (3.0 * _LAB_DELTA**2) + 4.0 / 29.0,
            )
        )
    fx, fy, fz = fxyz
    out[..., 0] = 116.0 * fy - 16.0
    out[..., 1] = 500.0 * (fx - fy)
    out[..., 2] = 200.0 * (fy - fz)
    return out


def _gradient(lab: np.ndarray, y: int, x: int) -> float:
    """Squared lab-space gradient with border-clamped central differences."""
    h, w = lab.shape[:2]
    yp, ym = min(y + 1, h - 1), max(y - 1, 0)
    xp, xm = min(x + 1, w - 1), max(x - 1, 0)
    dx = lab[y, xp] - lab[y, xm]
    dy = lab[yp, x] - lab[ym, x]
    gx = dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]
    gy = dy[0] * dy[0] + dy[1] * dy[1] + dy[2] * dy[2]
    return float(gx + gy)


def _grid_shape(height: int, width: int, n_segments: int) -> tuple[int, int]:
    ny = max(1, int(round(np.sqrt(n_segments * height / float(width)))))
    nx = max(1, int(round(n_segments / float(ny))))
    return ny, nx


def _initial_centers(lab: np.ndarray, n_segments: int) -> np.ndarray:
    """Grid-spaced centers moved to the lowest-gradient 3x3 neighbor."""
    h, w = lab.shape[:2]
    ny, nx = _grid_shape(h, w, n_segments)
    centers = []
    for iy in range(ny):
        cy = min(h - 1, int(np.floor((iy + 0.5) * h / ny)))
        for ix in range(nx):
            cx = min(w - 1, int(np.floor((ix + 0.5) * w / nx)))
            best_y, best_x = cy, cx
            best_g = np.inf
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy, xx = cy + dy, cx + dx
                    if 0 <= yy < h and 0 <= xx < w:
                        g = _gradient(lab, yy, xx)
                        if g < best_g:
                            best_g, best_y, best_x = g, yy, xx
            l, a, b = lab[best_y, best_x]
            centers.append([l, a, b, float(best_y), float(best_x)])
    return np.asarray(centers, dtype=np.float64)


def _assign(
    lab: np.ndarray, centers: np.ndarray, spacing: float, weight_sq: float
) -> np.ndarray:
    """One assignment pass; strict-less update keeps the lowest center index."""
    h, w = lab.shape[:2]
    labels = np.full((h, w), -1, dtype=np.int64)
    dist = np.full((h, w), np.inf, dtype=np.float64)
    for k in range(centers.shape[0]):
        cl, ca, cb, cy, cx = centers[k]
        y0 = max(0, int(np.floor(cy - spacing)))
        y1 = min(h, int(np.floor(cy + spacing)) + 1)
        x0 = max(0, int(np.floor(cx - spacing)))
        x1 = min(w, int(np.floor(cx + spacing)) + 1)
        if y0 >= y1 or x0 >= x1:
            continue
        win = lab[y0:y1, x0:x1]
        dl = win[..., 0] - cl
        da = win[..., 1] - ca
        db = win[..., 2] - cb
        ys = np.arange(y0, y1, dtype=np.float64)[:, None] - cy
        xs = np.arange(x0, x1, dtype=np.float64)[None, :] - cx
        d = np.sqrt(dl * dl + da * da + db * db + weight_sq * (ys * ys + xs * xs))
        window_dist = dist[y0:y1, x0:x1]
        better = d < window_dist
        window_dist[better] = d[better]
        labels[y0:y1, x0:x1][better] = k
    return labels


def _assign_leftovers(
    lab: np.ndarray, labels: np.ndarray, centers: np.ndarray, weight_sq: float
) -> None:
    """Attach pixels missed by every window to their nearest center."""
    missing = np.argwhere(labels < 0)
    for y, x in missing:
        l, a, b = lab[y, x]
        best, best_d = 0, np.inf
        for k in range(centers.shape[0]):
            cl, ca, cb, cy, cx = centers[k]
            dl, da, db = l - cl, a - ca, b - cb
            dy, dx = y - cy, x - cx
            d = np.sqrt(dl * dl + da * da + db * db + weight_sq * (dy * dy + dx * dx))
            if d < best_d:
                best_d, best = d, k
        labels[y, x] = best


def _update_centers(
    lab: np.ndarray, labels: np.ndarray, centers: np.ndarray
) -> np.ndarray:
    n = centers.shape[0]
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n).astype(np.float64)
    h, w = labels.shape
    yy, xx = np.divmod(np.arange(h * w, dtype=np.float64), float(w))
    sums = np.empty((n, 5), dtype=np.float64)
    for c in range(3):
        sums[:, c] = np.bincount(flat, weights=lab[..., c].ravel(), minlength=n)
    sums[:, 3] = np.bincount(flat, weights=yy, minlength=n)
    sums[:, 4] = np.bincount(flat, weights=xx, minlength=n)
    out = centers.copy()
    nonempty = counts > 0
    out[nonempty] = sums[nonempty] / counts[nonempty, None]
    return out


def _components(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected components of equal-label runs, ids by first row-major pixel."""
    from scipy import sparse
    from scipy.sparse import csgraph

    h, w = labels.shape
    idx = np.arange(h * w).reshape(h, w)
    right = labels[:, :-1] == labels[:, 1:]
    down = labels[:-1, :] == labels[1:, :]
    rows = np.concatenate([idx[:, :-1][right], idx[:-1, :][down]])
    cols = np.concatenate([idx[:, 1:][right], idx[1:, :][down]])
    graph = sparse.coo_matrix(
        (np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(h * w, h * w)
    )
    n_comp, comp = csgraph.connected_components(graph, directed=False)
    _, first = np.unique(comp, return_index=True)
    rank = np.empty(n_comp, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(n_comp)
    return rank[comp].reshape(h, w), n_comp


def _enforce_connectivity(labels: np.ndarray, min_size: float) -> np.ndarray:
    """Merge small 4-connected fragments into their largest adjacent region."""
    h, w = labels.shape
    comp, n_comp = _components(labels)
    flat = comp.ravel()
    sizes = np.bincount(flat, minlength=n_comp)

    diff_h = comp[:, :-1] != comp[:, 1:]
    diff_v = comp[:-1, :] != comp[1:, :]
    pair_a = np.concatenate([comp[:, :-1][diff_h], comp[:-1, :][diff_v]])
    pair_b = np.concatenate([comp[:, 1:][diff_h], comp[1:, :][diff_v]])
    neighbors_of: dict[int, set[int]] = {c: set() for c in range(n_comp)}
    for a, b in zip(pair_a.tolist(), pair_b.tolist()):
        neighbors_of[a].add(b)
        neighbors_of[b].add(a)

    parent = list(range(n_comp))

    def find(c: int) -> int:
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    size_of = {c: int(sizes[c]) for c in range(n_comp)}
    changed = True
    while changed:
        changed = False
        for c in range(n_comp):
            root = find(c)
            if root != c or size_of[root] >= min_size:
                continue
            candidates = {find(n) for n in neighbors_of[root]} - {root}
            if not candidates:
                continue
            target = max(sorted(candidates), key=lambda r: size_of[r])
            parent[root] = target
            size_of[target] += size_of.pop(root)
            neighbors_of[target] = (neighbors_of[target] | neighbors_of.pop(root)) - {
                root,
                target,
            }
            changed = True

    roots = np.fromiter((find(c) for c in range(n_comp)), dtype=np.int64, count=n_comp)
    root_flat = roots[flat]
    uniq_roots, first = np.unique(root_flat, return_index=True)
    order = np.argsort(first, kind="stable")
    lookup = np.zeros(n_comp, dtype=np.int32)
    lookup[uniq_roots[order]] = np.arange(order.size, dtype=np.int32)
    return lookup[root_flat].reshape(h, w).astype(np.int32)


def slic_segment(image: np.ndarray, cfg: SlicConfig) -> np.ndarray:
    """Partition an (H, W, 3) image into SLIC superpixel labels (int32)."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatchError(f"expected (H, W, 3) image, got {image.shape}")
    h, w = image.shape[:2]
    n_segments = cfg.resolved_segments(h, w)
    if n_segments > h * w:
        raise TooManySegmentsError(f"{n_segments} segments for {h * w} pixels")
    if n_segments == 1:
        return np.zeros((h, w), dtype=np.int32)
    lab = rgb_to_lab(image)
    spacing = np.sqrt(h * w / float(n_segments))
    weight_sq = (cfg.compactness / spacing) ** 2
    centers = _initial_centers(lab, n_segments)
    labels = np.zeros((h, w), dtype=np.int64)
    for _ in range(cfg.iterations):
        labels = _assign(lab, centers, spacing, weight_sq)
        if (labels < 0).any():
            _assign_leftovers(lab, labels, centers, weight_sq)
        centers = _update_centers(lab, labels, centers)
    min_size = cfg.min_region_fraction * (h * w / float(n_segments))
    return _enforce_connectivity(labels, min_size)


def regional_pool(score: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Replace each pixel by the mean of its superpixel."""
    if score.shape != labels.shape:
        raise ShapeMismatchError(f"score {score.shape} vs labels {labels.shape}")
    flat = labels.ravel()
    n = int(flat.max()) + 1
    sums = np.bincount(flat, weights=score.ravel().astype(np.float64), minlength=n)
    counts = np.bincount(flat, minlength=n)
    means = sums / counts
    return means[flat].reshape(score.shape)
