"""Structural-consistency gate from per-date geometry token grids.

The gate is half the cosine distance between corresponding tokens, so it
is 0 where the two dates' geometry agrees and 1 where it is antipodal.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatchError
from .score import upsample_bilinear

# below this, a token norm is treated as zero (cosine undefined)
_NORM_EPS = 1e-12


def gate_from_tokens(tokens_a: np.ndarray, tokens_b: np.ndarray) -> np.ndarray:
    """Per-location gate (1 - cosine similarity) / 2 over an (h, w, D) grid.

    Degenerate tokens: two near-zero vectors compare as identical (gate 0);
    a near-zero vector against a real one is uninformative (gate 0.5).
    """
    if tokens_a.shape != tokens_b.shape:
        raise ShapeMismatchError(
            f"token grids differ: {tokens_a.shape} vs {tokens_b.shape}"
        )
    a = tokens_a.astype(np.float64, copy=False)
    b = tokens_b.astype(np.float64, copy=False)
    dot = np.sum(a * b, axis=-1)
    sq_a = np.sum(a * a, axis=-1)
    sq_b = np.sum(b * b, axis=-1)
    # sqrt(sq_a * sq_b) keeps cosim(a, a) exactly 1 in IEEE arithmetic
    denom = np.sqrt(sq_a * sq_b)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0.0, dot / np.where(denom > 0.0, denom, 1.0), 0.0)
    zero_a = sq_a < _NORM_EPS**2
    zero_b = sq_b < _NORM_EPS**2
    cos = np.where(zero_a & zero_b, 1.0, np.where(zero_a ^ zero_b, 0.0, cos))
    cos = np.clip(cos, -1.0, 1.0)
    return (1.0 - cos) / 2.0


def upsample_gate(gate: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinearly upsample a token-resolution gate to pixel resolution."""
    return np.clip(upsample_bilinear(gate, height, width), 0.0, 1.0)
