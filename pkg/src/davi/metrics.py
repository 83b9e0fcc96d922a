"""Binary change-detection metrics over pixel confusion counts.

Counts are exact integers and additive, so pooled dataset scores are computed
by summing per-pair counts rather than averaging per-pair ratios. Ratios with
an empty denominator are reported as 0.0 and flagged as degenerate instead of
raising, because empty tiles are a normal occurrence.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data.manifest import DatasetManifest
from .data.tiles import load_ground_truth, read_binary_map
from .errors import MissingArtifactError, ValidationError
from .validation import check_binary_map, check_same_shape


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self) -> "ConfusionCounts":
        """Counts with the negative class treated as positive."""
        return ConfusionCounts(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)


def confusion(pred, gt) -> ConfusionCounts:
    pred = check_binary_map(pred, "prediction")
    gt = check_binary_map(gt, "ground truth")
    check_same_shape(("prediction", pred), ("ground truth", gt))
    p = pred.astype(bool)
    g = gt.astype(bool)
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & g)),
        fp=int(np.count_nonzero(p & ~g)),
        fn=int(np.count_nonzero(~p & g)),
        tn=int(np.count_nonzero(~p & ~g)),
    )


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp)


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def f1(c: ConfusionCounts) -> float:
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)


def iou(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp + c.fn)


def summarize(c: ConfusionCounts, scope: str = "positive") -> dict:
    """Score a set of counts.

    ``positive`` scores the change class alone; ``macro`` averages the change
    and no-change classes. ``degenerate`` marks scores where the change class
    was absent from both prediction and reference, so 0.0 means "undefined"
    rather than "wrong everywhere".
    """
    if scope == "positive":
        out = {
            "precision": precision(c),
            "recall": recall(c),
            "f1": f1(c),
            "iou": iou(c),
        }
    elif scope == "macro":
        s = c.swapped()
        out = {
            "precision": (precision(c) + precision(s)) / 2.0,
            "recall": (recall(c) + recall(s)) / 2.0,
            "f1": (f1(c) + f1(s)) / 2.0,
            "iou": (iou(c) + iou(s)) / 2.0,
        }
    else:
        raise ValidationError(f"scope must be 'positive' or 'macro', got {scope!r}")
    out["support"] = c.tp + c.fn
    out["degenerate"] = (c.tp + c.fp + c.fn) == 0
    return out


def evaluate_pairs(
    preds: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    ids: Optional[Sequence[str]] = None,
    scope: str = "positive",
) -> dict:
    """Pooled and per-pair scores for aligned prediction/reference lists."""
    if len(preds) == 0 or len(preds) != len(gts):
        raise ValidationError(
            f"need equally many predictions and references, got {len(preds)} and {len(gts)}"
        )
    if ids is None:
        ids = [f"pair_{i:04d}" for i in range(len(preds))]
    elif len(ids) != len(preds):
        raise ValidationError("ids must align with predictions")
    pooled = ConfusionCounts()
    per_pair = []
    for pair_id, pred, gt in zip(ids, preds, gts):
        c = confusion(pred, gt)
        pooled = pooled + c
        entry = {"id": pair_id, "counts": {"tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn}}
        entry.update(summarize(c, scope))
        per_pair.append(entry)
    report = {"n_pairs": len(per_pair), "pooled": summarize(pooled, scope), "per_pair": per_pair}
    report["pooled"]["counts"] = {
        "tp": pooled.tp,
        "fp": pooled.fp,
        "fn": pooled.fn,
        "tn": pooled.tn,
    }
    return report


def evaluate_run(pred_dir, manifest: DatasetManifest, strict: bool = True, scope: str = "positive") -> dict:
    """Score predicted masks on disk against a manifest's ground truth.

    Predictions are expected as ``<pred_dir>/<pair_id>.png``. Missing files
    abort when ``strict``; otherwise the pairs are skipped and listed under
    ``missing`` so partially failed runs can still be inspected.
    """
    pred_dir = Path(pred_dir)
    preds, gts, ids, missing = [], [], [], []
    for record in manifest.pairs:
        if record.gt is None:
            raise ValidationError(f"pair {record.pair_id!r} has no ground truth to score against")
        pred_path = pred_dir / f"{record.pair_id}.png"
        if not pred_path.is_file():
            if strict:
                raise MissingArtifactError(f"prediction not found: {pred_path}")
            missing.append(record.pair_id)
            continue
        preds.append(read_binary_map(pred_path))
        gts.append(load_ground_truth(record.gt))
        ids.append(record.pair_id)
    if not preds:
        raise MissingArtifactError(f"no predictions found under {pred_dir}")
    report = evaluate_pairs(preds, gts, ids, scope)
    report["missing"] = missing
    return report
