"""Dataset manifests: which pre/post/gt files form a pair, and for what role.

Schema ("davi-manifest/1", JSON):

    {
      "format": "davi-manifest/1",
      "role": "source" | "target",
      "pairs": [{"id": ..., "pre": ..., "post": ..., "gt": ...}, ...]
    }

Paths are stored relative to the manifest file and resolved on load.
Source-role manifests must carry ground truth on every pair; target-role
manifests may omit it. Validation reports every bad record at once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import MissingArtifactError, ValidationError

MANIFEST_FORMAT = "davi-manifest/1"
ROLES = ("source", "target")


@dataclass(frozen=True)
class PairRecord:
    pair_id: str
    pre: Path
    post: Path
    gt: Optional[Path] = None


@dataclass
class DatasetManifest:
    role: str
    pairs: list[PairRecord] = field(default_factory=list)
    path: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.pairs)

    def pair_ids(self) -> list[str]:
        return [p.pair_id for p in self.pairs]

    def with_gt(self) -> list[PairRecord]:
        return [p for p in self.pairs if p.gt is not None]


def load_manifest(path) -> DatasetManifest:
    """Load and validate a manifest, reporting every bad record."""
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc

    problems: list[str] = []
    if not isinstance(doc, dict) or doc.get("format") != MANIFEST_FORMAT:
        raise ValidationError(f"{path}: expected format {MANIFEST_FORMAT!r}")
    role = doc.get("role")
    if role not in ROLES:
        problems.append(f"role must be one of {ROLES}, got {role!r}")
    raw_pairs = doc.get("pairs")
    if not isinstance(raw_pairs, list) or not raw_pairs:
        raise ValidationError(f"{path}: manifest must list at least one pair")

    base = path.parent
    pairs: list[PairRecord] = []
    seen: set[str] = set()
    for idx, rec in enumerate(raw_pairs):
        where = f"pair #{idx}"
        if not isinstance(rec, dict):
            problems.append(f"{where}: record must be an object")
            continue
        pair_id = rec.get("id")
        if not isinstance(pair_id, str) or not pair_id:
            problems.append(f"{where}: missing id")
            pair_id = f"#{idx}"
        elif pair_id in seen:
            problems.append(f"{where}: duplicate id {pair_id!r}")
        seen.add(pair_id)

        paths: dict[str, Optional[Path]] = {}
        for key in ("pre", "post"):
            raw = rec.get(key)
            if not isinstance(raw, str) or not raw:
                problems.append(f"pair {pair_id!r}: missing {key} path")
                paths[key] = None
                continue
            resolved = (base / raw).resolve()
            if not resolved.is_file():
                problems.append(f"pair {pair_id!r}: {key} file not found: {raw}")
            paths[key] = resolved
        gt_raw = rec.get("gt")
        gt: Optional[Path] = None
        if gt_raw is not None:
            gt = (base / gt_raw).resolve()
            if not gt.is_file():
                problems.append(f"pair {pair_id!r}: gt file not found: {gt_raw}")
        elif role == "source":
            problems.append(f"pair {pair_id!r}: source manifests require gt on every pair")

        if paths["pre"] is not None and paths["post"] is not None:
            pairs.append(PairRecord(pair_id=pair_id, pre=paths["pre"], post=paths["post"], gt=gt))

    if problems:
        listing = "\n  - ".join(problems)
        raise ValidationError(f"{path}: invalid manifest:\n  - {listing}")
    return DatasetManifest(role=role, pairs=pairs, path=path)


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write a manifest with paths stored relative to its own location."""
    path = Path(path)
    base = path.parent.resolve()

    def rel(p: Optional[Path]) -> Optional[str]:
        if p is None:
            return None
        p = Path(p).resolve()
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    doc = {
        "format": MANIFEST_FORMAT,
        "role": manifest.role,
        "pairs": [
            {
                "id": rec.pair_id,
                "pre": rel(rec.pre),
                "post": rel(rec.post),
                **({"gt": rel(rec.gt)} if rec.gt is not None else {}),
            }
            for rec in manifest.pairs
        ],
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_pairs(manifest: DatasetManifest) -> tuple[list[str], np.ndarray]:
    """Load every pair's tiles into an (N, 2, H, W, 3) float32 array."""
    from .tiles import load_tile  # tiles -> arrayio only, safe to defer

    ids, stacks = [], []
    for rec in manifest.pairs:
        ids.append(rec.pair_id)
        stacks.append(np.stack([load_tile(rec.pre), load_tile(rec.post)]))
    try:
        return ids, np.stack(stacks)
    except ValueError as exc:
        raise ValidationError(f"pairs do not share one tile size: {exc}") from exc


def load_targets(manifest: DatasetManifest) -> np.ndarray:
    """Load every pair's ground truth into an (N, H, W) uint8 array."""
    from .tiles import load_ground_truth

    missing = [rec.pair_id for rec in manifest.pairs if rec.gt is None]
    if missing:
        raise ValidationError(f"pairs without ground truth: {missing}")
    try:
        return np.stack([load_ground_truth(rec.gt) for rec in manifest.pairs])
    except ValueError as exc:
        raise ValidationError(f"ground truth maps do not share one size: {exc}") from exc
