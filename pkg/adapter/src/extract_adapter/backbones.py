"""Backbone wrappers: one thin interface per model, plus deterministic mocks.

Real backbones are loaded lazily from locations named by environment
variables so the adapter itself never hard-depends on model weights:

    EXTRACT_ADAPTER_SEG_MODEL  - TorchScript promptable segmenter; called as
        model(image 1x3xHxW float32 [0,1], prompt_index int64) and expected
        to return (masks Nx h x w in [0,1], confidences N).
    EXTRACT_ADAPTER_GEO_MODEL  - TorchScript encoder; called on a 1x3xRxR
        float32 batch and expected to return per-layer token stacks
        L x (h*w) x D (or a single (h*w) x D tensor for the chosen layer).

When a variable is unset or the file is missing, loading raises
BackboneUnavailable so callers can decide whether to fall back to mocks.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np


class BackboneUnavailable(RuntimeError):
    """Requested a real backbone that is not present on this machine."""


SEG_MODEL_ENV = "EXTRACT_ADAPTER_SEG_MODEL"
GEO_MODEL_ENV = "EXTRACT_ADAPTER_GEO_MODEL"


def _load_torchscript(env_var: str):
    path = os.environ.get(env_var)
    if not path:
        raise BackboneUnavailable(f"{env_var} is not set; no local weights to load")
    if not Path(path).is_file():
        raise BackboneUnavailable(f"{env_var}={path} does not exist")
    try:
        import torch
    except ImportError as exc:
        raise BackboneUnavailable("torch is not installed") from exc
    return torch, torch.jit.load(path, map_location="cpu").eval()


class RealSegmenter:
    """Prompt-conditioned instance segmentation behind a TorchScript module."""

    def __init__(self):
        self._torch, self._model = _load_torchscript(SEG_MODEL_ENV)

    def instances(self, image: np.ndarray, prompt_index: int):
        torch = self._torch
        batch = torch.from_numpy(
            (image.astype(np.float32) / 255.0).transpose(2, 0, 1)[None]
        )
        with torch.no_grad():
            masks, confidences = self._model(batch, torch.tensor(prompt_index))
        masks = np.clip(masks.numpy().astype(np.float32), 0.0, 1.0)
        confidences = np.clip(confidences.numpy().astype(np.float32), 0.0, 1.0)
        return [(m, float(c)) for m, c in zip(masks, confidences)]

    def dense_map(self, image: np.ndarray, prompt_index: int):
        return None  # dense branch optional; TorchScript contract omits it


class RealGeometryEncoder:
    """Intermediate-layer token extraction behind a TorchScript module."""

    def __init__(self, layer: int, resolution: int):
        self._torch, self._model = _load_torchscript(GEO_MODEL_ENV)
        self.layer = layer
        self.resolution = resolution

    def tokens(self, image: np.ndarray) -> np.ndarray:
        torch = self._torch
        from PIL import Image

        resized = np.asarray(
            Image.fromarray(image.astype(np.uint8)).resize(
                (self.resolution, self.resolution), Image.BILINEAR
            ),
            dtype=np.float32,
        )
        batch = torch.from_numpy((resized / 255.0).transpose(2, 0, 1)[None])
        with torch.no_grad():
            out = self._model(batch)
        arr = out.numpy().astype(np.float32)
        if arr.ndim == 3:  # per-layer stack, pick the configured layer
            arr = arr[min(self.layer, arr.shape[0] - 1)]
        side = int(round(np.sqrt(arr.shape[0])))
        return arr.reshape(side, side, -1)


class MockSegmenter:
    """Deterministic stand-in: each prompt is a detector with a fixed,
    seeded color preference, so evidence differs across dates exactly
    where the image content changed (no per-image renormalization)."""

    def __init__(self, seed: int, vocabulary_size: int):
        self._rng = np.random.Generator(np.random.PCG64(seed))
        # per-prompt color projection and preferred response, both fixed
        # across dates so cross-date differences stay localized
        self._proj = self._rng.uniform(-1.0, 1.0, size=(vocabulary_size, 3))
        self._mu = self._rng.uniform(-0.4, 0.4, size=vocabulary_size)

    def dense_map(self, image: np.ndarray, prompt_index: int) -> np.ndarray:
        mix = image.astype(np.float64) / 255.0 @ self._proj[prompt_index]
        z = (mix - self._mu[prompt_index]) / 0.25
        return (0.9 * np.exp(-0.5 * z * z)).astype(np.float32)

    def instances(self, image: np.ndarray, prompt_index: int):
        dense = self.dense_map(image, prompt_index)
        # mask heads run below input resolution; mimic with a half-res grid
        native = dense[::2, ::2]
        strong = (native > 0.7).astype(np.float32)
        out = []
        if strong.any():
            confidence = float(np.clip(native[strong > 0].mean(), 0.0, 1.0))
            out.append((strong, confidence))
        out.append(((native > 0.45).astype(np.float32), 0.35))
        return out


class MockGeometryEncoder:
    """Tokens mix per-cell image statistics with a seeded basis, so dates
    agree where the images agree and diverge where content changed."""

    def __init__(self, seed: int, resolution: int, depth: int = 32, patch: int = 14):
        self._rng = np.random.Generator(np.random.PCG64(seed + 1))
        self.grid = max(2, resolution // patch)
        self.depth = depth
        self._basis = self._rng.normal(size=(4, depth))

    def tokens(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        g = self.grid
        out = np.zeros((g, g, self.depth), dtype=np.float32)
        for gy in range(g):
            y0, y1 = gy * h // g, max((gy + 1) * h // g, gy * h // g + 1)
            for gx in range(g):
                x0, x1 = gx * w // g, max((gx + 1) * w // g, gx * w // g + 1)
                cell = image[y0:y1, x0:x1].astype(np.float64) / 255.0
                # deviations from fixed references, so content changes
                # rotate the token rather than just rescaling it
                stats = np.array(
                    [
                        cell[..., 0].mean() - 0.5,
                        cell[..., 1].mean() - 0.5,
                        cell[..., 2].mean() - 0.5,
                        cell.std() - 0.25,
                    ]
                )
                out[gy, gx] = (stats @ self._basis).astype(np.float32)
        return out
