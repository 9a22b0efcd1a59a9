"""Final mask inference: 8-bit quantization, thresholding, structural filtering."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage


@dataclass(frozen=True)
class DecodeConfig:
    """Threshold and structural-filter parameters.

    ``min_component_area`` of None scales the 512x512 default of 32 px by
    pixel count (floored, at least 1).
    """

    tau_u8: int = 127
    opening_radius: int = 1
    closing_radius: int = 1
    min_component_area: int | None = None

    def __post_init__(self):
        if not 0 <= self.tau_u8 <= 255:
            raise ValueError("tau_u8 must be in [0, 255]")
        if self.opening_radius < 0 or self.closing_radius < 0:
            raise ValueError("radii must be >= 0")

    def resolved_min_area(self, height: int, width: int) -> int:
        if self.min_component_area is not None:
            return self.min_component_area
        return max(1, int(np.floor(32 * (height * width) / float(512 * 512))))


def quantize_and_threshold(pooled: np.ndarray, tau_u8: int) -> np.ndarray:
    """Binary mask: floor(255 * pooled) strictly above the 8-bit threshold."""
    u8 = np.floor(255.0 * np.asarray(pooled, dtype=np.float64))
    return (u8 > tau_u8).astype(np.uint8)


def _square(radius: int) -> np.ndarray:
    side = 2 * radius + 1
    return np.ones((side, side), dtype=bool)


def struct_filter(
    mask: np.ndarray, cfg: DecodeConfig, enabled: bool = True
) -> np.ndarray:
    """Opening, then closing, then area filtering of 8-connected components.

    Pixels beyond the image border count as background for both erosion
    and dilation. Disabled, the input passes through unchanged.
    """
    if not enabled:
        return mask.copy()
    out = mask.astype(bool)
    if cfg.opening_radius > 0:
        st = _square(cfg.opening_radius)
        out = ndimage.binary_erosion(out, st, border_value=0)
        out = ndimage.binary_dilation(out, st, border_value=0)
    if cfg.closing_radius > 0:
        st = _square(cfg.closing_radius)
        out = ndimage.binary_dilation(out, st, border_value=0)
        out = ndimage.binary_erosion(out, st, border_value=0)
    min_area = cfg.resolved_min_area(*mask.shape)
    if min_area > 1:
        lbl, n = ndimage.label(out, structure=np.ones((3, 3), dtype=bool))
        if n:
            areas = np.bincount(lbl.ravel(), minlength=n + 1)
            small = areas < min_area
            small[0] = False
            out[small[lbl]] = False
    return out.astype(np.uint8)


def write_mask_png(path: str | Path, mask: np.ndarray) -> None:
    """Write a binary mask as a single-channel PNG with values {0, 255}."""
    img = Image.fromarray((mask.astype(np.uint8) * 255), mode="L")
    img.save(path)


def read_mask(path: str | Path) -> np.ndarray:
    """Read a {0, 255} or {0, 1} mask from PNG or NPY into uint8 {0, 1}."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"))
    else:
        from .tensorio import read_dense_array

        arr = read_dense_array(path)
    return (arr > 0).astype(np.uint8)
