"""End-to-end inference: scores -> calibrated deltas -> gate -> fusion ->
regional pooling -> mask decoding, plus dataset evaluation and benchmarking."""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import consensus, decode, evaluation, gate, posterior, score, tensorio
from .errors import MissingFileError, UsageError, ValueOutOfRangeError

ABLATIONS = ("no_cpc", "no_geogate", "no_additive", "no_slic", "no_structfilter")
GATE_OFF_MODES = ("constant_one", "pure_delta")
DUMP_STAGES = ("delta", "gate", "fused", "pooled", "y0")


@dataclass(frozen=True)
class PipelineConfig:
    retention: score.RetentionConfig = field(default_factory=score.RetentionConfig)
    calibration: posterior.CalibrationConfig = field(
        default_factory=posterior.CalibrationConfig
    )
    fusion: consensus.FusionConfig = field(default_factory=consensus.FusionConfig)
    slic: consensus.SlicConfig = field(default_factory=consensus.SlicConfig)
    decode: decode.DecodeConfig = field(default_factory=decode.DecodeConfig)
    ablations: frozenset[str] = frozenset()
    # how a disabled gate behaves: neutral constant-1 gate, or skip fusion
    gate_off_mode: str = "constant_one"
    # drop a bank's own prompts from each member's competitor set
    exclude_bank_competitors: bool = False
    # per-class prompt banks overriding the manifest's queried_prompt_sets
    prompt_banks: dict[str, list[int]] = field(default_factory=dict)
    workers: int | None = None

    def __post_init__(self):
        if not isinstance(self.ablations, frozenset):
            object.__setattr__(self, "ablations", frozenset(self.ablations))
        bad = self.ablations - set(ABLATIONS)
        if bad:
            raise UsageError(f"unknown ablation(s) {sorted(bad)}; valid: {ABLATIONS}")
        if self.gate_off_mode not in GATE_OFF_MODES:
            raise UsageError(f"gate_off_mode must be one of {GATE_OFF_MODES}")

    def to_dict(self) -> dict:
        out: dict = {}
        for section in ("retention", "calibration", "fusion", "slic", "decode"):
            sub = getattr(self, section)
            out[section] = {f.name: getattr(sub, f.name) for f in fields(sub)}
        out["ablations"] = sorted(self.ablations)
        out["gate_off_mode"] = self.gate_off_mode
        out["exclude_bank_competitors"] = self.exclude_bank_competitors
        out["prompt_banks"] = {k: list(v) for k, v in sorted(self.prompt_banks.items())}
        out["workers"] = self.workers
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config key(s) {sorted(unknown)}")
        kwargs: dict = {}
        sections = {
            "retention": score.RetentionConfig,
            "calibration": posterior.CalibrationConfig,
            "fusion": consensus.FusionConfig,
            "slic": consensus.SlicConfig,
            "decode": decode.DecodeConfig,
        }
        for name, klass in sections.items():
            if name in data:
                try:
                    kwargs[name] = klass(**data[name])
                except (TypeError, ValueError) as exc:
                    raise UsageError(f"bad {name} config: {exc}") from exc
        if "ablations" in data:
            kwargs["ablations"] = frozenset(data["ablations"])
        for key in ("gate_off_mode", "exclude_bank_competitors", "workers"):
            if key in data:
                kwargs[key] = data[key]
        if "prompt_banks" in data:
            kwargs["prompt_banks"] = {
                str(k): [int(i) for i in v] for k, v in data["prompt_banks"].items()
            }
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise MissingFileError(f"config not found: {path}")
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    def with_ablations(self, names: Sequence[str]) -> "PipelineConfig":
        return replace(self, ablations=self.ablations | frozenset(names))


@dataclass
class DetectResult:
    pair_id: str
    mask: np.ndarray  # uint8 {0, 1}
    intermediates: dict[str, np.ndarray]  # delta, gate, fused, pooled, y0 (+labels)


def resolve_prompts(
    manifest: tensorio.PairManifest, class_name: str, cfg: PipelineConfig
) -> list[int]:
    """Prompt bank for a class: config override, manifest set, or vocab lookup."""
    if class_name in cfg.prompt_banks:
        prompts = cfg.prompt_banks[class_name]
    elif class_name in manifest.queried_prompt_sets:
        prompts = manifest.queried_prompt_sets[class_name]
    elif class_name in manifest.vocabulary:
        prompts = [manifest.vocabulary.index(class_name)]
    else:
        raise UsageError(
            f"class {class_name!r} is neither a configured bank, a manifest "
            f"prompt set, nor a vocabulary entry"
        )
    k = len(manifest.vocabulary)
    bad = [p for p in prompts if not 0 <= p < k]
    if bad:
        raise ValueOutOfRangeError(f"prompt indices {bad} outside [0, {k})")
    return list(prompts)


def detect_bundle(
    bundle: tensorio.PairBundle, class_name: str, cfg: PipelineConfig
) -> DetectResult:
    """Run the full inference chain on an already-loaded pair."""
    manifest = bundle.manifest
    h, w = manifest.height, manifest.width
    off = cfg.ablations

    stack_a = score.build_score_stack(bundle.a, cfg.retention)
    stack_b = score.build_score_stack(bundle.b, cfg.retention)
    prompts = resolve_prompts(manifest, class_name, cfg)
    delta = posterior.aggregate_prompt_deltas(
        stack_a,
        stack_b,
        prompts,
        cfg.calibration,
        enabled="no_cpc" not in off,
        exclude_bank_competitors=cfg.exclude_bank_competitors,
    )

    pure_delta = "no_geogate" in off and cfg.gate_off_mode == "pure_delta"
    if "no_geogate" in off:
        gate_map = np.zeros((h, w)) if pure_delta else np.ones((h, w))
    else:
        gate_map = gate.upsample_gate(
            gate.gate_from_tokens(bundle.a.tokens, bundle.b.tokens), h, w
        )

    if pure_delta:
        fused = delta.copy()
    else:
        fused = consensus.fuse(
            delta, gate_map, cfg.fusion, additive_enabled="no_additive" not in off
        )
    clipped = consensus.clip_unit(fused)

    intermediates = {"delta": delta, "gate": gate_map, "fused": fused}
    if "no_slic" in off:
        pooled = clipped
    else:
        avg = consensus.average_image(bundle.a.image, bundle.b.image)
        labels = consensus.slic_segment(avg, cfg.slic)
        pooled = consensus.regional_pool(clipped, labels)
        intermediates["labels"] = labels
    intermediates["pooled"] = pooled

    y0 = decode.quantize_and_threshold(pooled, cfg.decode.tau_u8)
    intermediates["y0"] = y0
    mask = decode.struct_filter(y0, cfg.decode, enabled="no_structfilter" not in off)
    return DetectResult(pair_id=manifest.pair_id, mask=mask, intermediates=intermediates)


def run_detect(
    manifest_path: str | Path,
    class_name: str,
    cfg: PipelineConfig,
    dump_dir: str | Path | None = None,
) -> DetectResult:
    """Detect changes for one pair manifest, optionally dumping intermediates."""
    manifest = tensorio.read_manifest(manifest_path)
    bundle = tensorio.load_pair_bundle(manifest)
    result = detect_bundle(bundle, class_name, cfg)
    if dump_dir is not None:
        dump_dir = Path(dump_dir)
        dump_dir.mkdir(parents=True, exist_ok=True)
        for stage in DUMP_STAGES:
            arr = result.intermediates[stage]
            dtype = np.uint8 if stage == "y0" else np.float32
            tensorio.write_dense_array(
                dump_dir / f"{result.pair_id}.{stage}.npy", arr.astype(dtype)
            )
        if "labels" in result.intermediates:
            tensorio.write_dense_array(
                dump_dir / f"{result.pair_id}.labels.npy",
                result.intermediates["labels"].astype(np.int32),
            )
    return result


def _load_dataset(dataset_path: str | Path) -> tuple[list[dict], dict[str, int], Path]:
    dataset_path = Path(dataset_path)
    if not dataset_path.is_file():
        raise MissingFileError(f"dataset index not found: {dataset_path}")
    with open(dataset_path, encoding="utf-8") as fh:
        data = json.load(fh)
    pairs = data.get("pairs", [])
    class_ids = {str(k): int(v) for k, v in data.get("class_ids", {}).items()}
    return pairs, class_ids, dataset_path.parent


def run_evaluate(
    dataset_path: str | Path,
    classes: Sequence[str],
    cfg: PipelineConfig,
    mask_dir: str | Path | None = None,
    per_pair_average: bool = False,
) -> evaluation.EvalReport:
    """Evaluate every (pair, class) and micro-aggregate confusion counts."""
    pairs, class_ids, base = _load_dataset(dataset_path)
    if not pairs:
        from .errors import EmptyDatasetError

        raise EmptyDatasetError(f"{dataset_path}: dataset lists no pairs")
    classes = list(classes) or sorted(class_ids)
    if not classes:
        raise UsageError("no classes given and dataset declares no class_ids")

    def one_pair(entry: dict) -> tuple[dict[str, evaluation.ConfusionCounts], float]:
        manifest = tensorio.read_manifest(base / entry["manifest"])
        bundle = tensorio.load_pair_bundle(manifest)
        change_gt = tensorio.read_dense_array(base / entry["change_gt"])
        sem_a = (
            tensorio.read_dense_array(base / entry["sem_a"])
            if entry.get("sem_a")
            else None
        )
        sem_b = (
            tensorio.read_dense_array(base / entry["sem_b"])
            if entry.get("sem_b")
            else None
        )
        counts: dict[str, evaluation.ConfusionCounts] = {}
        start = time.perf_counter()
        for cls in classes:
            if (sem_a is not None or sem_b is not None) and cls not in class_ids:
                raise UsageError(
                    f"class {cls!r} has no id in the dataset's class_ids"
                )
            result = detect_bundle(bundle, cls, cfg)
            gt = evaluation.derive_class_gt(
                sem_a, sem_b, change_gt, class_ids.get(cls, -1)
            )
            counts[cls] = evaluation.confusion(result.mask, gt)
            if mask_dir is not None:
                out = Path(mask_dir)
                out.mkdir(parents=True, exist_ok=True)
                tensorio.write_dense_array(
                    out / f"{manifest.pair_id}.{cls}.mask.npy", result.mask
                )
        return counts, time.perf_counter() - start

    workers = cfg.workers or os.cpu_count() or 1
    results: list[tuple[dict, float]] = []
    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_pair, pairs))
    else:
        results = [one_pair(p) for p in pairs]

    by_class: dict[str, list[evaluation.ConfusionCounts]] = {c: [] for c in classes}
    stats = evaluation.TimingStats()
    for counts, latency in results:
        for cls, c in counts.items():
            by_class[cls].append(c)
        stats.latencies.append(latency)
    report = evaluation.aggregate(by_class, per_pair_average=per_pair_average)
    report.timing = stats.as_dict()
    report.peak_memory_bytes = evaluation.peak_memory_bytes()
    return report


def run_bench(
    manifest_paths: Sequence[str | Path],
    class_name: str,
    cfg: PipelineConfig,
    repetitions: int = 3,
) -> dict:
    """Latency/throughput over repeated runs; the first repetition warms up."""
    if repetitions < 2:
        raise UsageError("bench needs repetitions >= 2 (one warm-up plus one timed)")
    total = evaluation.TimingStats()
    compute = evaluation.TimingStats()
    for rep in range(repetitions):
        for path in manifest_paths:
            start = time.perf_counter()
            manifest = tensorio.read_manifest(path)
            bundle = tensorio.load_pair_bundle(manifest)
            mid = time.perf_counter()
            detect_bundle(bundle, class_name, cfg)
            end = time.perf_counter()
            if rep == 0:
                continue  # warm-up pass
            total.latencies.append(end - start)
            compute.latencies.append(end - mid)
    return {
        "pairs": len(manifest_paths),
        "repetitions": repetitions,
        "total": total.as_dict(),
        "compute_only": compute.as_dict(),
        "peak_memory_bytes": evaluation.peak_memory_bytes(),
        "config_hash": cfg.config_hash(),
    }
