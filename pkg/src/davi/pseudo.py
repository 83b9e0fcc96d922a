"""Pseudo-label generation (Step 1) and per-iteration refinement (Step 2).

Step 1 runs once per target dataset against the frozen source model and the
segmenter: per pair it keeps the source model's binary map, the thresholded
segmenter confidence difference, and the per-pair coarse change bit. The
result is frozen: adaptation reads it, never rewrites it.

Step 2 (:func:`refine_pseudo_label`) is recomputed every training step from
the adapting model's predictions on a pair and its augmented views. The
label construction switches (``label_source``, ``use_coarse_mask``,
``use_refinement``) exist so ablation runs can disable individual stages.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from . import maps, threshold
from .data import arrayio
from .errors import MissingArtifactError, SegmenterBackendError, ValidationError
from .segmenters import DEFAULT_PROMPT, Segmenter
from .validation import check_binary_map, check_pair, check_probability_map

LABEL_SOURCES = ("source", "diffsam", "fusion")
LABEL_STORE_FORMAT = "davi-labels/1"


@dataclass(frozen=True)
class PairPseudoLabels:
    """Frozen Step-1 outputs for one pair."""

    pair_id: str
    m0: np.ndarray  # source model binary map
    mv: np.ndarray  # thresholded confidence difference
    q: int  # coarse change bit, from m0
    diff: Optional[np.ndarray] = None  # raw confidence difference, kept for audit


@dataclass
class PseudoLabelSet:
    prompt: str
    tau_v: float
    entries: dict[str, PairPseudoLabels] = field(default_factory=dict)
    failures: list[tuple[str, str]] = field(default_factory=list)
    threshold_result: Optional[threshold.ThresholdSearchResult] = None

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, pair_id: str) -> PairPseudoLabels:
        try:
            return self.entries[pair_id]
        except KeyError:
            raise MissingArtifactError(f"no pseudo labels for pair {pair_id!r}") from None


def generate_pseudo_labels(
    source,
    segmenter: Segmenter,
    pairs: Sequence[tuple[str, np.ndarray, np.ndarray]],
    grid: Optional[Sequence[float]] = None,
    prompt: str = DEFAULT_PROMPT,
    tau_v: Optional[float] = None,
    continue_on_error: bool = False,
) -> PseudoLabelSet:
    """Run Step 1 over (pair_id, pre, post) triples.

    ``source`` needs a ``predict_pair(pre, post) -> probability map`` method.
    When ``tau_v`` is given the threshold search is skipped and the value is
    recorded as-is. Segmenter failures abort the run unless
    ``continue_on_error`` is set, in which case the pair is recorded under
    ``failures`` and skipped.
    """
    if not pairs:
        raise ValidationError("no pairs to label")
    partial: list[tuple[str, np.ndarray, np.ndarray, int]] = []
    failures: list[tuple[str, str]] = []
    for pair_id, pre, post in pairs:
        pre, post = check_pair(pre, post)
        m0 = maps.binarize(check_probability_map(source.predict_pair(pre, post)), 0.5)
        try:
            w_pre, w_post = segmenter.segment_pair(pre, post, prompt)
        except SegmenterBackendError as exc:
            if not continue_on_error:
                raise
            failures.append((pair_id, str(exc)))
            continue
        diff = maps.clipped_confidence_diff(w_pre, w_post)
        partial.append((pair_id, m0, diff, maps.coarse_label(m0)))

    if not partial:
        raise ValidationError(
            "segmentation failed for every pair: " + "; ".join(msg for _, msg in failures)
        )

    threshold_result = None
    if tau_v is None:
        threshold_result = threshold.search_tau(
            [diff for _, _, diff, _ in partial],
            [m0 for _, m0, _, _ in partial],
            grid,
        )
        tau_v = threshold_result.tau_v
    elif not 0.0 <= tau_v <= 1.0:
        raise ValidationError(f"tau_v must lie in [0, 1], got {tau_v}")

    result = PseudoLabelSet(
        prompt=prompt, tau_v=float(tau_v), failures=failures, threshold_result=threshold_result
    )
    for pair_id, m0, diff, q in partial:
        result.entries[pair_id] = PairPseudoLabels(
            pair_id=pair_id, m0=m0, mv=maps.binarize(diff, tau_v), q=q, diff=diff
        )
    return result


def refine_pseudo_label(
    views: Sequence[np.ndarray],
    m0: np.ndarray,
    mv: np.ndarray,
    q: int,
    tau_r: float,
    label_source: str = "fusion",
    use_coarse_mask: bool = True,
    use_refinement: bool = True,
) -> np.ndarray:
    """Build the per-iteration supervision map from the current predictions.

    ``views`` are the adapting model's probability maps on the original pair
    and its augmented counterparts. With ``tau_r`` of 0 or refinement
    disabled, the consistency update is a no-op and the map reduces to the
    frozen Step-1 construction.
    """
    if label_source not in LABEL_SOURCES:
        raise ValidationError(f"label_source must be one of {LABEL_SOURCES}, got {label_source!r}")
    m0 = check_binary_map(m0, "m0")
    mv = check_binary_map(mv, "mv")
    if use_refinement and tau_r > 0.0:
        u_hat, sigma = maps.mean_std(views)
        u = maps.binarize(u_hat, 0.5)
        m_c = maps.consistency_update(u, sigma, m0, tau_r)
    else:
        m_c = m0
    if label_source == "source":
        fine = m_c
    elif label_source == "diffsam":
        fine = mv
    else:
        fine = maps.combine_max(m_c, mv)
    return maps.mask_fine(q, fine) if use_coarse_mask else fine.copy()


# ---------------------------------------------------------------------------
# On-disk label store: labels.json index plus one JSON file per pair with the
# binary maps embedded as base64 PNG (and the raw diff as a base64 container).


def _encode_binary(m: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(check_binary_map(m) * np.uint8(255), mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _decode_binary(data: str) -> np.ndarray:
    with Image.open(io.BytesIO(base64.b64decode(data))) as img:
        arr = np.asarray(img.convert("L"), dtype=np.uint8)
    return (arr == 255).astype(np.uint8)


def _encode_float(arr: np.ndarray) -> str:
    return base64.b64encode(arrayio.encode_array(np.asarray(arr, dtype=np.float32))).decode("ascii")


def _decode_float(data: str) -> np.ndarray:
    return arrayio.decode_array(base64.b64decode(data), origin="embedded diff map")


def save_label_store(labels: PseudoLabelSet, directory) -> None:
    """Persist Step-1 labels: one JSON file per pair plus an index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {
        "format": LABEL_STORE_FORMAT,
        "prompt": labels.prompt,
        "tau_v": labels.tau_v,
        "pair_ids": sorted(labels.entries),
        "failures": [{"id": pid, "reason": reason} for pid, reason in labels.failures],
        "threshold": labels.threshold_result.to_dict() if labels.threshold_result else None,
    }
    (directory / "labels.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    for pair_id, entry in labels.entries.items():
        doc = {
            "format": "davi-pair-labels/1",
            "id": pair_id,
            "q": entry.q,
            "m0_png": _encode_binary(entry.m0),
            "mv_png": _encode_binary(entry.mv),
        }
        if entry.diff is not None:
            doc["diff_davg"] = _encode_float(entry.diff)
        (directory / f"{pair_id}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_label_store(directory) -> PseudoLabelSet:
    directory = Path(directory)
    index_path = directory / "labels.json"
    if not index_path.is_file():
        raise MissingArtifactError(f"label store index not found: {index_path}")
    index = json.loads(index_path.read_text())
    if index.get("format") != LABEL_STORE_FORMAT:
        raise ValidationError(f"{index_path}: expected format {LABEL_STORE_FORMAT!r}")
    result = PseudoLabelSet(
        prompt=index["prompt"],
        tau_v=float(index["tau_v"]),
        failures=[(f["id"], f["reason"]) for f in index.get("failures", [])],
        threshold_result=None,
    )
    if index.get("threshold"):
        t = index["threshold"]
        result.threshold_result = threshold.ThresholdSearchResult(
            tau_v=float(t["tau_v"]),
            best_f1=float(t["best_f1"]),
            grid=[(float(g["candidate"]), float(g["f1"])) for g in t["grid"]],
        )
    for pair_id in index["pair_ids"]:
        pair_path = directory / f"{pair_id}.json"
        if not pair_path.is_file():
            raise MissingArtifactError(f"label store entry missing: {pair_path}")
        doc = json.loads(pair_path.read_text())
        result.entries[pair_id] = PairPseudoLabels(
            pair_id=pair_id,
            m0=_decode_binary(doc["m0_png"]),
            mv=_decode_binary(doc["mv_png"]),
            q=int(doc["q"]),
            diff=_decode_float(doc["diff_davg"]) if "diff_davg" in doc else None,
        )
    return result


def store_digest(directory) -> str:
    """Content hash over every file in a label store; detects any mutation."""
    directory = Path(directory)
    h = hashlib.sha256()
    for path in sorted(directory.glob("*.json")):
        h.update(path.name.encode())
        h.update(b"\x00")
        h.update(path.read_bytes())
    return h.hexdigest()
