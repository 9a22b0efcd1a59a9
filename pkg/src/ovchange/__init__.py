"""Training-free open-vocabulary change detection from precomputed features."""

from .pipeline import DetectResult, PipelineConfig, run_bench, run_detect, run_evaluate

__all__ = [
    "DetectResult",
    "PipelineConfig",
    "run_bench",
    "run_detect",
    "run_evaluate",
]

__version__ = "0.1.0"
