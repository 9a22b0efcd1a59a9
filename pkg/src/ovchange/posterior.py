"""Competition-aware posterior calibration and cross-date posterior deltas.

Raw concept scores are rescaled by how strongly the queried concept
dominates its strongest competitor; the change signal is the absolute
difference of the calibrated posteriors, max-pooled over a prompt bank.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyPromptSetError, ShapeMismatchError


@dataclass(frozen=True)
class CalibrationConfig:
    """Exponent of the dominance ratio and its numerical stabilizer."""

    rho: float = 1.5
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be > 0")
        if self.rho < 0.0:
            raise ValueError("rho must be >= 0")


def strongest_competitor(
    stack: np.ndarray, q: int, exclude: Iterable[int] = ()
) -> np.ndarray:
    """Per-pixel maximum over all prompts other than q (and ``exclude``).

    An empty competitor set (K == 1, or everything excluded) yields zeros.
    """
    k = stack.shape[0]
    if not 0 <= q < k:
        raise IndexError(f"prompt index {q} outside [0, {k})")
    drop = {q} | {int(i) for i in exclude}
    keep = [i for i in range(k) if i not in drop]
    if not keep:
        return np.zeros(stack.shape[1:], dtype=np.float64)
    return stack[keep].max(axis=0).astype(np.float64, copy=False)


def calibration_kernel(
    score: np.ndarray, competitor: np.ndarray, cfg: CalibrationConfig
) -> np.ndarray:
    """score * (score / (score + competitor + epsilon)) ** rho, element-wise."""
    score = np.asarray(score, dtype=np.float64)
    competitor = np.asarray(competitor, dtype=np.float64)
    ratio = score / (score + competitor + cfg.epsilon)
    return score * ratio**cfg.rho


def calibrate(
    stack: np.ndarray,
    q: int,
    cfg: CalibrationConfig,
    enabled: bool = True,
    exclude_competitors: Iterable[int] = (),
) -> np.ndarray:
    """Calibrated posterior for prompt q; raw score passthrough when disabled."""
    if not 0 <= q < stack.shape[0]:
        raise IndexError(f"prompt index {q} outside [0, {stack.shape[0]})")
    score = stack[q].astype(np.float64, copy=False)
    if not enabled:
        return score.copy()
    competitor = strongest_competitor(stack, q, exclude=exclude_competitors)
    return calibration_kernel(score, competitor, cfg)


def posterior_delta(p_a: np.ndarray, p_b: np.ndarray) -> np.ndarray:
    """Absolute difference of two posterior maps."""
    if p_a.shape != p_b.shape:
        raise ShapeMismatchError(f"posterior shapes differ: {p_a.shape} vs {p_b.shape}")
    return np.abs(p_a - p_b)


def aggregate_prompt_deltas(
    stack_a: np.ndarray,
    stack_b: np.ndarray,
    prompts: Sequence[int],
    cfg: CalibrationConfig,
    enabled: bool = True,
    exclude_bank_competitors: bool = False,
) -> np.ndarray:
    """Max over the prompt bank of the per-prompt posterior deltas.

    Each prompt is calibrated as the queried concept against the full
    remaining vocabulary; with ``exclude_bank_competitors`` the other
    members of the same bank are removed from the competitor set.
    """
    if stack_a.shape != stack_b.shape:
        raise ShapeMismatchError(
            f"score stacks differ across dates: {stack_a.shape} vs {stack_b.shape}"
        )
    prompts = list(prompts)
    if not prompts:
        raise EmptyPromptSetError("queried class maps to an empty prompt set")
    exclude = set(prompts) if exclude_bank_competitors else set()
    delta = np.zeros(stack_a.shape[1:], dtype=np.float64)
    for p in prompts:
        p_a = calibrate(stack_a, p, cfg, enabled, exclude - {p})
        p_b = calibrate(stack_b, p, cfg, enabled, exclude - {p})
        np.maximum(delta, np.abs(p_a - p_b), out=delta)
    return delta
