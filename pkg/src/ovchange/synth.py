"""Deterministic synthetic scene generator for tests and desk-scale evaluation.

A scene plants one concept change inside a region: the queried prompt's
evidence rises from background level to high at date b, competitor
prompts carry static activations, geometry tokens rotate inside the
region (norm-preserving, so only their direction changes) and optional
appearance noise perturbs date b's image and queried scores to mimic
pseudo change. Everything derives from one PCG64 stream, so a seed
reproduces byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import SceneSpecError
from .score import upsample_bilinear
from .tensorio import write_dense_array

BACKGROUND_SCORE = 0.05
INSTANCE_CONFIDENCE = 0.95
DISTRACTOR_CONFIDENCE = 0.25  # below the default retention threshold
IMAGE_NOISE_SCALE = 40.0  # pseudo_change_noise of 1.0 -> +/-40 illumination shift


@dataclass(frozen=True)
class Region:
    """Planted change support: a rectangle or the ellipse it inscribes."""

    row0: int
    col0: int
    row1: int  # exclusive
    col1: int  # exclusive
    kind: str = "rect"

    def mask(self, height: int, width: int) -> np.ndarray:
        if not (0 <= self.row0 < self.row1 <= height and 0 <= self.col0 < self.col1 <= width):
            raise SceneSpecError(f"region {self} outside {height}x{width} image")
        out = np.zeros((height, width), dtype=np.uint8)
        if self.kind == "rect":
            out[self.row0 : self.row1, self.col0 : self.col1] = 1
        elif self.kind == "ellipse":
            cy = (self.row0 + self.row1 - 1) / 2.0
            cx = (self.col0 + self.col1 - 1) / 2.0
            ry = max(0.5, (self.row1 - self.row0) / 2.0)
            rx = max(0.5, (self.col1 - self.col0) / 2.0)
            yy, xx = np.mgrid[0:height, 0:width]
            out[((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0] = 1
        else:
            raise SceneSpecError(f"unknown region kind {self.kind!r}")
        return out


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    height: int = 64
    width: int = 64
    k: int = 4
    token_depth: int = 8
    grid_h: int = 8
    grid_w: int = 8
    planted_region: Region = field(default_factory=lambda: Region(20, 20, 44, 44))
    queried_class: int = 0
    competitor_strength: float = 0.3
    pseudo_change_noise: float = 0.0
    token_change_magnitude: float = np.pi  # radians, rotation inside the region
    token_noise: float = 0.0  # jitter of tokens outside the region

    def validate(self) -> None:
        if self.height < 4 or self.width < 4:
            raise SceneSpecError("scene must be at least 4x4")
        if self.k < 1:
            raise SceneSpecError("vocabulary must have at least one prompt")
        if not 0 <= self.queried_class < self.k:
            raise SceneSpecError("queried_class outside vocabulary")
        if self.grid_h < 1 or self.grid_w < 1 or self.token_depth < 2:
            raise SceneSpecError("token grid needs positive dims and depth >= 2")
        if not 0.0 <= self.competitor_strength <= 1.0:
            raise SceneSpecError("competitor_strength must be in [0, 1]")
        self.planted_region.mask(self.height, self.width)


def _smooth_field(rng: np.random.Generator, height: int, width: int, coarse: int = 8):
    """Spatially coherent field in [0, 1): low-res noise, bilinearly upsampled."""
    base = rng.random((min(coarse, height), min(coarse, width)))
    return upsample_bilinear(base, height, width)


def _rotate_tokens(
    rng: np.random.Generator, tokens: np.ndarray, angle: float
) -> np.ndarray:
    """Rotate each token by ``angle`` within a random plane containing it."""
    out = tokens.copy()
    flat = out.reshape(-1, tokens.shape[-1])
    for i in range(flat.shape[0]):
        g = flat[i]
        norm = np.linalg.norm(g)
        if norm < 1e-9:
            continue
        r = rng.normal(size=g.shape)
        e = r - (r @ g) / (norm * norm) * g
        e_norm = np.linalg.norm(e)
        if e_norm < 1e-9:
            continue
        flat[i] = np.cos(angle) * g + np.sin(angle) * (norm / e_norm) * e
    return out


def gen_scene(spec: SceneSpec, out_dir: str | Path) -> tuple[Path, np.ndarray]:
    """Write one scene's files and manifest; return (manifest path, planted GT)."""
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    h, w, k, q = spec.height, spec.width, spec.k, spec.queried_class
    gt = spec.planted_region.mask(h, w)
    inside = gt.astype(bool)

    # dense maps: queried prompt sits at background level, competitors carry
    # static smooth activations; the last non-queried prompt gets no file at
    # all to exercise the absent-branch convention
    dense_a = np.zeros((k, h, w), dtype=np.float64)
    dense_b = np.zeros((k, h, w), dtype=np.float64)
    omitted = max(i for i in range(k) if i != q) if k > 1 else None
    for i in range(k):
        if i == q:
            dense_a[i] = BACKGROUND_SCORE
            dense_b[i] = BACKGROUND_SCORE
        elif i != omitted:
            dense_a[i] = spec.competitor_strength * _smooth_field(rng, h, w)
            dense_b[i] = dense_a[i]
    if spec.pseudo_change_noise > 0:
        # coherent blobs of spurious queried-concept response at date b;
        # squaring concentrates the field into superpixel-scale peaks
        noise_map = spec.pseudo_change_noise * _smooth_field(rng, h, w) ** 2
        dense_b[q] = np.clip(np.maximum(dense_b[q], noise_map), 0.0, 1.0)

    # date-b queried instances: one covering the region at half resolution,
    # plus a low-confidence distractor the retention filter must drop
    inst_mask = upsample_bilinear(gt.astype(np.float64), max(1, h // 2), max(1, w // 2))
    distractor = np.zeros((max(1, h // 4), max(1, w // 4)), dtype=np.float64)
    distractor[: max(1, h // 8), : max(1, w // 8)] = 1.0

    # images: shared smooth background, the region repainted at date b,
    # plus optional appearance noise on date b
    image_a = np.empty((h, w, 3), dtype=np.float64)
    for c in range(3):
        image_a[..., c] = 60.0 + 140.0 * _smooth_field(rng, h, w)
    image_b = image_a.copy()
    image_b[inside, 0] = np.clip(image_b[inside, 0] + 70.0, 0, 255)
    image_b[inside, 2] = np.clip(image_b[inside, 2] - 50.0, 0, 255)
    if spec.pseudo_change_noise > 0:
        # low-frequency illumination-style shift, per channel
        for c in range(3):
            shift = (_smooth_field(rng, h, w) - 0.5) * 2.0
            image_b[..., c] = np.clip(
                image_b[..., c] + spec.pseudo_change_noise * IMAGE_NOISE_SCALE * shift,
                0.0,
                255.0,
            )

    # tokens: identical across dates outside the region (up to token_noise),
    # rotated by token_change_magnitude where a cell's pixel block overlaps it
    tokens_a = rng.normal(size=(spec.grid_h, spec.grid_w, spec.token_depth))
    tokens_b = tokens_a.copy()
    token_inside = np.zeros((spec.grid_h, spec.grid_w), dtype=bool)
    for gy in range(spec.grid_h):
        y0, y1 = gy * h // spec.grid_h, max((gy + 1) * h // spec.grid_h, gy * h // spec.grid_h + 1)
        for gx in range(spec.grid_w):
            x0, x1 = gx * w // spec.grid_w, max((gx + 1) * w // spec.grid_w, gx * w // spec.grid_w + 1)
            token_inside[gy, gx] = inside[y0:y1, x0:x1].any()
    if spec.token_change_magnitude != 0.0 and token_inside.any():
        rotated = _rotate_tokens(
            rng, tokens_a[token_inside], spec.token_change_magnitude
        )
        tokens_b[token_inside] = rotated
    if spec.token_noise > 0:
        outside = ~token_inside
        tokens_b[outside] = tokens_a[outside] + spec.token_noise * rng.normal(
            size=tokens_a[outside].shape
        )

    def put(name: str, arr: np.ndarray, dtype=np.float32) -> str:
        write_dense_array(out_dir / name, arr.astype(dtype))
        return name

    manifest = {
        "pair_id": f"scene-{spec.seed:04d}",
        "image_height": h,
        "image_width": w,
        "vocabulary": [f"concept-{i:02d}" for i in range(k)],
        "queried_prompt_sets": {"target": [q]},
        "dates": {
            "a": {
                "instances": [[] for _ in range(k)],
                "dense": [put(f"a_dense_{i}.npy", dense_a[i]) if i != omitted else None for i in range(k)],
                "tokens": put("a_tokens.npy", tokens_a),
                "image": put("a_image.npy", image_a),
            },
            "b": {
                "instances": [
                    [
                        {"mask": put("b_inst_main.npy", inst_mask), "confidence": INSTANCE_CONFIDENCE},
                        {"mask": put("b_inst_distractor.npy", distractor), "confidence": DISTRACTOR_CONFIDENCE},
                    ]
                    if i == q
                    else []
                    for i in range(k)
                ],
                "dense": [put(f"b_dense_{i}.npy", dense_b[i]) if i != omitted else None for i in range(k)],
                "tokens": put("b_tokens.npy", tokens_b),
                "image": put("b_image.npy", image_b),
            },
        },
    }
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_dense_array(out_dir / "gt.npy", gt.astype(np.uint8))
    return manifest_path, gt


def gen_dataset(
    base: SceneSpec, n_pairs: int, out_dir: str | Path
) -> Path:
    """Generate ``n_pairs`` scenes (seeds base.seed..+n-1) plus a dataset index."""
    out_dir = Path(out_dir)
    pairs = []
    for i in range(n_pairs):
        spec = replace(base, seed=base.seed + i)
        scene_dir = out_dir / f"pair{i:03d}"
        manifest_path, _ = gen_scene(spec, scene_dir)
        pairs.append(
            {
                "manifest": str(manifest_path.relative_to(out_dir)),
                "change_gt": str((scene_dir / "gt.npy").relative_to(out_dir)),
                "sem_a": None,
                "sem_b": None,
            }
        )
    dataset = {"pairs": pairs, "class_ids": {"target": 1}}
    dataset_path = out_dir / "dataset.json"
    with open(dataset_path, "w", encoding="utf-8") as fh:
        json.dump(dataset, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return dataset_path
