"""Changed-class metrics, OR-rule ground truth, dataset aggregation, timing."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import EmptyDatasetError, ShapeMismatchError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.tn + other.tn,
        )


@dataclass
class TimingStats:
    latencies: list[float] = field(default_factory=list)  # seconds, warm-up excluded

    @property
    def mean(self) -> float:
        return float(np.mean(self.latencies)) if self.latencies else 0.0

    @property
    def throughput_per_minute(self) -> float:
        return 60.0 / self.mean if self.mean > 0 else 0.0

    def as_dict(self) -> dict:
        if not self.latencies:
            return {"pairs_timed": 0}
        return {
            "pairs_timed": len(self.latencies),
            "mean_latency_s": self.mean,
            "min_latency_s": float(min(self.latencies)),
            "max_latency_s": float(max(self.latencies)),
            "throughput_pairs_per_min": self.throughput_per_minute,
        }


@dataclass
class EvalReport:
    per_class: dict[str, dict]  # metrics (%) and summed counts per class
    class_average: dict[str, float]
    pair_count: int
    timing: dict = field(default_factory=dict)
    peak_memory_bytes: int | None = None

    def as_dict(self) -> dict:
        return {
            "per_class": self.per_class,
            "class_average": self.class_average,
            "pair_count": self.pair_count,
            "timing": self.timing,
            "peak_memory_bytes": self.peak_memory_bytes,
        }


def derive_class_gt(
    sem_a: np.ndarray | None,
    sem_b: np.ndarray | None,
    change_gt: np.ndarray,
    class_id: int,
) -> np.ndarray:
    """Positive where change occurred and either date belongs to the class.

    Binary (class-agnostic) datasets omit the semantic maps, making the
    change map itself the per-class ground truth.
    """
    change = np.asarray(change_gt) > 0
    if sem_a is None and sem_b is None:
        return change.astype(np.uint8)
    member = np.zeros_like(change)
    for sem in (sem_a, sem_b):
        if sem is None:
            continue
        if sem.shape != change.shape:
            raise ShapeMismatchError(
                f"semantic map {sem.shape} vs change map {change.shape}"
            )
        member |= np.asarray(sem) == class_id
    return (change & member).astype(np.uint8)


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    """Per-pixel confusion counts of two binary masks."""
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"pred {pred.shape} vs gt {gt.shape}")
    p = np.asarray(pred) > 0
    g = np.asarray(gt) > 0
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = p.size - tp - fp - fn
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def metrics(counts: ConfusionCounts) -> dict[str, float]:
    """Changed-class precision/recall/IoU/F1 as percentages; 0/0 counts as 0."""

    def ratio(num: int, den: int) -> float:
        return 100.0 * num / den if den else 0.0

    precision = ratio(counts.tp, counts.tp + counts.fp)
    recall = ratio(counts.tp, counts.tp + counts.fn)
    iou = ratio(counts.tp, counts.tp + counts.fp + counts.fn)
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    return {"precision": precision, "recall": recall, "iou": iou, "f1": f1}


def aggregate(
    counts_by_class: Mapping[str, Iterable[ConfusionCounts]],
    per_pair_average: bool = False,
) -> EvalReport:
    """Micro-aggregate counts per class, then average metrics over classes.

    ``per_pair_average`` switches to macro aggregation within each class
    (mean of per-pair metrics instead of metrics of summed counts).
    """
    per_class: dict[str, dict] = {}
    pair_count = 0
    for name, stream in counts_by_class.items():
        stream = list(stream)
        if not stream:
            continue
        pair_count = max(pair_count, len(stream))
        total = sum(stream, ConfusionCounts())
        if per_pair_average:
            per_pair = [metrics(c) for c in stream]
            vals = {
                k: float(np.mean([m[k] for m in per_pair]))
                for k in ("precision", "recall", "iou", "f1")
            }
        else:
            vals = metrics(total)
        per_class[name] = {
            **vals,
            "counts": {"tp": total.tp, "fp": total.fp, "fn": total.fn, "tn": total.tn},
        }
    if not per_class:
        raise EmptyDatasetError("no evaluated pairs")
    class_average = {
        k: float(np.mean([c[k] for c in per_class.values()]))
        for k in ("precision", "recall", "iou", "f1")
    }
    return EvalReport(
        per_class=per_class, class_average=class_average, pair_count=pair_count
    )


def time_pair(run: Callable[[], object]) -> float:
    """Wall-clock seconds for one pipeline invocation."""
    start = time.perf_counter()
    run()
    return time.perf_counter() - start


def peak_memory_bytes() -> int | None:
    """Best-effort peak RSS of this process, None where unavailable."""
    try:
        import resource

        kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        return int(kb) * 1024
    except Exception:
        return None
