"""Search the binarization threshold for segmenter confidence differences.

The threshold is chosen once per target dataset by sweeping a candidate
grid and keeping the value whose binarized difference maps best agree
(dataset-pooled F1) with the source model's binary maps. Pooling global
TP/FP/FN avoids the per-image F1 degeneracy on all-negative tiles, and
ties break toward the smallest candidate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateReferenceError, ValidationError
from .validation import check_binary_map, check_probability_map, check_same_shape


def default_grid() -> list[float]:
    """0.05 .. 0.95 in steps of 0.05 (19 candidates)."""
    return [round(0.05 * i, 2) for i in range(1, 20)]


@dataclass
class ThresholdSearchResult:
    tau_v: float
    best_f1: float
    grid: list[tuple[float, float]]  # (candidate, pooled F1)

    def to_dict(self) -> dict:
        return {
            "format": "davi-threshold/1",
            "tau_v": self.tau_v,
            "best_f1": self.best_f1,
            "grid": [{"candidate": t, "f1": f} for t, f in self.grid],
        }


def _check_grid(grid: Sequence[float]) -> list[float]:
    grid = [float(t) for t in grid]
    if not grid:
        raise ValidationError("candidate grid must be non-empty")
    if any(not 0.0 <= t <= 1.0 for t in grid):
        raise ValidationError("candidate grid values must lie in [0, 1]")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValidationError("candidate grid must be strictly increasing")
    return grid


def search_tau(
    diff_maps: Sequence[np.ndarray],
    m0_maps: Sequence[np.ndarray],
    grid: Optional[Sequence[float]] = None,
) -> ThresholdSearchResult:
    """Maximize pooled F1 between thresholded diff maps and the reference maps.

    The reference maps are treated as ground truth for counting purposes.
    All grid points are evaluated (this search IS the brute force); order of
    the dataset does not affect the result.
    """
    if len(diff_maps) == 0 or len(diff_maps) != len(m0_maps):
        raise ValidationError(
            f"need equally many diff maps and reference maps, got {len(diff_maps)} and {len(m0_maps)}"
        )
    grid = _check_grid(default_grid() if grid is None else grid)

    pairs = []
    for i, (diff, m0) in enumerate(zip(diff_maps, m0_maps)):
        diff = check_probability_map(diff, f"diff map {i}")
        m0 = check_binary_map(m0, f"reference map {i}")
        check_same_shape((f"diff map {i}", diff), (f"reference map {i}", m0))
        pairs.append((diff, m0.astype(bool)))

    total_positive = sum(int(m0.sum()) for _, m0 in pairs)
    if total_positive == 0:
        raise DegenerateReferenceError(
            "reference maps contain no positive pixels across the dataset; "
            "agreement F1 is undefined for every candidate"
        )

    evaluated: list[tuple[float, float]] = []
    best_t, best_f1 = grid[0], -1.0
    for t in grid:
        tp = fp = fn = 0
        for diff, m0 in pairs:
            pred = diff >= np.float32(t)
            tp += int(np.count_nonzero(pred & m0))
            fp += int(np.count_nonzero(pred & ~m0))
            fn += int(np.count_nonzero(~pred & m0))
        f1 = 2.0 * tp / (2.0 * tp + fp + fn)  # denominator > 0: fn+tp >= total_positive
        evaluated.append((t, f1))
        if f1 > best_f1:
            best_t, best_f1 = t, f1
    return ThresholdSearchResult(tau_v=best_t, best_f1=best_f1, grid=evaluated)


def save_report(result: ThresholdSearchResult, path) -> None:
    Path(path).write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")


def load_report(path) -> ThresholdSearchResult:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"threshold report not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("format") != "davi-threshold/1":
        raise ValidationError(f"{path}: expected format 'davi-threshold/1'")
    return ThresholdSearchResult(
        tau_v=float(doc["tau_v"]),
        best_f1=float(doc["best_f1"]),
        grid=[(float(g["candidate"]), float(g["f1"])) for g in doc["grid"]],
    )
