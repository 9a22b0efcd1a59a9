"""Export per-prompt instances, dense maps and geometry tokens for one
image pair into the manifest + tensor-file layout the inference CLI reads."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .backbones import (
    BackboneUnavailable,
    MockGeometryEncoder,
    MockSegmenter,
    RealGeometryEncoder,
    RealSegmenter,
)
from .npyio import write_npy


class ImageLoadError(RuntimeError):
    """An input image could not be read."""


@dataclass(frozen=True)
class ExtractionJob:
    image_a: str
    image_b: str
    vocabulary: list[str]
    mode: str = "mock"  # "real" or "mock"
    seed: int | None = None  # required in mock mode
    token_layer: int = 23
    resolution: int = 336
    prompt_banks: dict[str, list[int]] = field(default_factory=dict)
    fallback_to_mock: bool = False  # real mode: degrade instead of failing

    def validate(self) -> None:
        if self.mode not in ("real", "mock"):
            raise ValueError(f"mode must be real or mock, got {self.mode!r}")
        if self.mode == "mock" and self.seed is None:
            raise ValueError("mock mode requires a seed")
        if not self.vocabulary:
            raise ValueError("vocabulary must not be empty")

    @classmethod
    def from_dict(cls, data: dict) -> "ExtractionJob":
        return cls(
            image_a=data["image_a"],
            image_b=data["image_b"],
            vocabulary=list(data["vocabulary"]),
            mode=data.get("mode", "mock"),
            seed=data.get("seed"),
            token_layer=int(data.get("token_layer", 23)),
            resolution=int(data.get("resolution", 336)),
            prompt_banks={
                str(k): [int(i) for i in v]
                for k, v in data.get("prompt_banks", {}).items()
            },
            fallback_to_mock=bool(data.get("fallback_to_mock", False)),
        )


def _load_image(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise ImageLoadError(f"cannot read image {path}: {exc}") from exc


def _build_backbones(job: ExtractionJob):
    if job.mode == "real":
        try:
            segmenter = RealSegmenter()
            encoder = RealGeometryEncoder(job.token_layer, job.resolution)
            return segmenter, encoder
        except BackboneUnavailable:
            if not job.fallback_to_mock:
                raise
            if job.seed is None:
                raise BackboneUnavailable(
                    "fallback to mock requested but no seed was provided"
                )
    segmenter = MockSegmenter(job.seed, len(job.vocabulary))
    encoder = MockGeometryEncoder(job.seed, job.resolution)
    return segmenter, encoder


def extract(job: ExtractionJob, out_dir: str | Path) -> Path:
    """Run both dates through the backbones and write the pair manifest."""
    job.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_a = _load_image(job.image_a)
    image_b = _load_image(job.image_b)
    if image_a.shape != image_b.shape:
        raise ImageLoadError(
            f"image sizes differ: {image_a.shape[:2]} vs {image_b.shape[:2]}"
        )
    segmenter, encoder = _build_backbones(job)
    height, width = image_a.shape[:2]
    k = len(job.vocabulary)

    dates = {}
    for key, image in (("a", image_a), ("b", image_b)):
        write_npy(out_dir / f"{key}_image.npy", image.astype(np.float32))
        instance_refs = []
        dense_refs = []
        for p in range(k):
            records = []
            for i, (mask, confidence) in enumerate(segmenter.instances(image, p)):
                name = f"{key}_inst_p{p}_{i}.npy"
                write_npy(out_dir / name, np.clip(mask, 0.0, 1.0).astype(np.float32))
                records.append({"mask": name, "confidence": round(confidence, 6)})
            instance_refs.append(records)
            dense = segmenter.dense_map(image, p)
            if dense is None:
                dense_refs.append(None)
            else:
                name = f"{key}_dense_p{p}.npy"
                write_npy(out_dir / name, np.clip(dense, 0.0, 1.0).astype(np.float32))
                dense_refs.append(name)
        tokens = encoder.tokens(image)
        write_npy(out_dir / f"{key}_tokens.npy", tokens.astype(np.float32))
        dates[key] = {
            "instances": instance_refs,
            "dense": dense_refs,
            "tokens": f"{key}_tokens.npy",
            "image": f"{key}_image.npy",
        }

    prompt_sets = {name: [i] for i, name in enumerate(job.vocabulary)}
    prompt_sets.update(job.prompt_banks)
    manifest = {
        "pair_id": f"{Path(job.image_a).stem}__{Path(job.image_b).stem}",
        "image_height": height,
        "image_width": width,
        "vocabulary": list(job.vocabulary),
        "queried_prompt_sets": prompt_sets,
        "dates": dates,
    }
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path
