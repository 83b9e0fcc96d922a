"""Shared fixtures: small synthetic datasets, trained models, stub segmenters.

Dataset and model construction is memoized per seed at session scope because
several test modules (and most acceptance criteria) reuse the same artifacts.
Everything is CPU-only and sized so the whole suite stays in the minutes
range.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import pytest

from davi.data import (
    DatasetManifest,
    SyntheticSceneConfig,
    generate_synthetic_dataset,
    load_pairs,
    load_targets,
)
from davi.data.synthetic import SyntheticStyle, source_style
from davi.data.tiles import load_tile
from davi.estimators import SourceChangeDetector
from davi.metrics import ConfusionCounts, confusion, f1
from davi.segmenters import OracleIndex, image_content_hash

TILE = 48


def small_scene_config(style: SyntheticStyle) -> SyntheticSceneConfig:
    """Desk-scale scenes: 48 px tiles with 6-12 px buildings."""
    return SyntheticSceneConfig(
        tile_height=TILE,
        tile_width=TILE,
        building_size_min=6,
        building_size_max=12,
        style=style,
    )


def mild_shift_style() -> SyntheticStyle:
    """Target look that degrades the source model without blinding it.

    Background drifts toward olive and roofs to blue-gray, with more noise
    than the source palette; the source detector still fires at least one
    pixel on most damaged pairs, which the coarse-label gate relies on.
    """
    return SyntheticStyle(
        background_color=(0.44, 0.47, 0.36),
        background_noise=0.04,
        roof_color=(0.50, 0.55, 0.62),
        roof_jitter=0.05,
        roof_noise=0.03,
        rubble_color=(0.50, 0.48, 0.45),
        rubble_noise=0.12,
        sensor_noise=0.02,
        brightness=0.02,
    )


def pooled_f1(preds, gts) -> float:
    total = ConfusionCounts()
    for pred, gt in zip(preds, gts):
        total = total + confusion(pred, gt)
    return f1(total)


def thin_oracle(
    index: OracleIndex, dataset_dir, drop_fraction: float, seed: int
) -> OracleIndex:
    """Copy of an oracle index that forgot some damaged buildings entirely.

    Dropping a building from both the pre and post entries makes its
    confidence difference zero, i.e. a segmenter recall miss.
    """
    scenes = json.loads((dataset_dir / "scenes.json").read_text())["scenes"]
    doc = json.loads((dataset_dir / "manifest.json").read_text())
    rng = np.random.default_rng(seed)
    thinned = OracleIndex(prompt=index.prompt)
    thinned.entries = {k: [dict(r) for r in v] for k, v in index.entries.items()}
    by_id = {s["pair_id"]: s for s in scenes}
    for rec in doc["pairs"]:
        scene = by_id[rec["id"]]
        dropped = [
            [b["top"], b["left"], b["top"] + b["height"], b["left"] + b["width"]]
            for b in scene["buildings"]
            if b["state"] != "intact" and rng.random() < drop_fraction
        ]
        if not dropped:
            continue
        for key in ("pre", "post"):
            h = image_content_hash(load_tile(dataset_dir / rec[key]))
            thinned.entries[h] = [r for r in thinned.entries[h] if r["rect"] not in dropped]
    return thinned


class StubDiffDetector:
    """Deterministic stand-in model: scaled mean absolute channel difference."""

    def __init__(self, gain: float = 3.0):
        self.gain = gain

    def predict_pair(self, pre, post) -> np.ndarray:
        diff = np.abs(pre.astype(np.float32) - post.astype(np.float32)).mean(axis=2)
        return np.clip(diff * self.gain, 0.0, 1.0).astype(np.float32)


@dataclass
class PipelineEnv:
    """One seeded source/target dataset pair, fully loaded."""

    seed: int
    source_dir: object
    target_dir: object
    source_manifest: DatasetManifest
    target_manifest: DatasetManifest
    source_ids: list
    source_arr: np.ndarray
    source_y: np.ndarray
    target_ids: list
    target_arr: np.ndarray
    target_y: np.ndarray
    oracle: OracleIndex

    def target_pairs(self):
        return [
            (pid, self.target_arr[i, 0], self.target_arr[i, 1])
            for i, pid in enumerate(self.target_ids)
        ]


@pytest.fixture(scope="session")
def make_env(tmp_path_factory):
    """Memoized builder for seeded pipeline environments."""
    cache: dict = {}

    def build(seed: int, n_source: int = 24, n_target: int = 50) -> PipelineEnv:
        key = (seed, n_source, n_target)
        if key in cache:
            return cache[key]
        root = tmp_path_factory.mktemp(f"env_{seed}")
        source_dir = root / "source"
        target_dir = root / "target"
        source_manifest, _ = generate_synthetic_dataset(
            small_scene_config(source_style()), n_source, source_dir, seed=seed, role="source"
        )
        target_manifest, oracle = generate_synthetic_dataset(
            small_scene_config(mild_shift_style()), n_target, target_dir, seed=seed + 1, role="target"
        )
        source_ids, source_arr = load_pairs(source_manifest)
        target_ids, target_arr = load_pairs(target_manifest)
        env = PipelineEnv(
            seed=seed,
            source_dir=source_dir,
            target_dir=target_dir,
            source_manifest=source_manifest,
            target_manifest=target_manifest,
            source_ids=source_ids,
            source_arr=source_arr,
            source_y=load_targets(source_manifest),
            target_ids=target_ids,
            target_arr=target_arr,
            target_y=load_targets(target_manifest),
            oracle=oracle,
        )
        cache[key] = env
        return env

    return build


@pytest.fixture(scope="session")
def make_source(make_env):
    """Memoized source-model trainer for a given environment seed."""
    cache: dict = {}

    def train(seed: int, epochs: int = 12) -> SourceChangeDetector:
        key = (seed, epochs)
        if key not in cache:
            env = make_env(seed)
            cache[key] = SourceChangeDetector(epochs=epochs, seed=seed).fit(
                env.source_arr, env.source_y
            )
        return cache[key]

    return train


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
