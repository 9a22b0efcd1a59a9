"""Per-prompt dense concept scores from retained instances and the dense branch.

A prompt's score at a pixel is the larger of the best confidence-weighted
upsampled instance mask value and the dense semantic response; an empty
instance set contributes 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError, ZeroDimensionError
from .tensorio import DateInputs, InstanceRecord


@dataclass(frozen=True)
class RetentionConfig:
    """Instance filtering: drop low-confidence detections, keep the top R."""

    confidence_threshold: float = 0.5
    top_r: int = 30

    def __post_init__(self):
        if self.top_r < 1:
            raise ValueError("top_r must be >= 1")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must be in [0, 1]")


def filter_instances(
    instances: list[InstanceRecord], cfg: RetentionConfig
) -> list[InstanceRecord]:
    """Keep instances at/above the confidence threshold, best-first, at most top R.

    Sorting is stable so equally confident instances keep their input order.
    """
    kept = [r for r in instances if r.confidence >= cfg.confidence_threshold]
    kept.sort(key=lambda r: -r.confidence)
    return kept[: cfg.top_r]


def upsample_bilinear(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinearly resample a 2-D grid to (height, width).

    Half-pixel-center alignment: destination pixel x maps to source
    coordinate (x + 0.5) * (w_src / w_dst) - 0.5, clamped to the border.
    A constant grid therefore maps to a constant grid of any size.
    """
    if grid.ndim != 2:
        raise ShapeMismatchError(f"expected 2-D grid, got shape {grid.shape}")
    src_h, src_w = grid.shape
    if src_h < 1 or src_w < 1 or height < 1 or width < 1:
        raise ZeroDimensionError("all dimensions must be >= 1")
    grid = grid.astype(np.float64, copy=False)

    ys = np.clip((np.arange(height) + 0.5) * (src_h / height) - 0.5, 0.0, src_h - 1.0)
    xs = np.clip((np.arange(width) + 0.5) * (src_w / width) - 0.5, 0.0, src_w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]

    top = grid[y0[:, None], x0[None, :]] * (1.0 - fx) + grid[y0[:, None], x1[None, :]] * fx
    bot = grid[y1[:, None], x0[None, :]] * (1.0 - fx) + grid[y1[:, None], x1[None, :]] * fx
    return top * (1.0 - fy) + bot * fy


def build_concept_score(
    retained: list[InstanceRecord],
    dense_branch: np.ndarray | None,
    height: int,
    width: int,
) -> np.ndarray:
    """Aggregate already-filtered instances and the dense branch into one map."""
    score = np.zeros((height, width), dtype=np.float64)
    for rec in retained:
        np.maximum(score, rec.confidence * upsample_bilinear(rec.mask, height, width), out=score)
    if dense_branch is not None:
        if dense_branch.shape != (height, width):
            raise ShapeMismatchError(
                f"dense branch is {dense_branch.shape}, expected {(height, width)}"
            )
        np.maximum(score, dense_branch.astype(np.float64, copy=False), out=score)
    return score


def build_score_stack(date: DateInputs, cfg: RetentionConfig) -> np.ndarray:
    """Stack per-prompt concept scores for one date into a (K, H, W) array."""
    k, h, w = date.dense.shape
    stack = np.empty((k, h, w), dtype=np.float64)
    for prompt in range(k):
        retained = filter_instances(date.instances[prompt], cfg)
        stack[prompt] = build_concept_score(retained, date.dense[prompt], h, w)
    return stack
