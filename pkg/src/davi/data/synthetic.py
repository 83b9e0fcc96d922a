"""Synthetic paired-imagery generator for desk-scale runs.

Each pair is a flat textured background with a few rectangular buildings.
Damaged buildings keep their footprint in the post image but lose their roof
texture (destroyed -> rubble, partial -> washed-out roof). A scene record
fully determines both rendered tiles, the ground-truth map and the oracle
segmenter's responses, so everything downstream is reproducible from
(config, seed).

Two built-in styles provide a controlled domain shift: "source" renders dry
terrain with dark-red roofs, "target" renders green terrain with blue-gray
roofs under different brightness and noise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import ValidationError
from .manifest import DatasetManifest, PairRecord, save_manifest
from .tiles import save_tile, write_binary_map

BUILDING_STATES = ("intact", "destroyed", "partial")


@dataclass(frozen=True)
class SyntheticStyle:
    """Rendering palette and noise levels; vary these to shift domains."""

    background_color: tuple[float, float, float] = (0.58, 0.52, 0.42)
    background_noise: float = 0.03
    roof_color: tuple[float, float, float] = (0.62, 0.22, 0.18)
    roof_jitter: float = 0.05
    roof_noise: float = 0.02
    rubble_color: tuple[float, float, float] = (0.42, 0.40, 0.38)
    rubble_noise: float = 0.10
    sensor_noise: float = 0.015
    brightness: float = 0.0


def source_style() -> SyntheticStyle:
    return SyntheticStyle()


def target_style() -> SyntheticStyle:
    return SyntheticStyle(
        background_color=(0.30, 0.42, 0.28),
        background_noise=0.05,
        roof_color=(0.50, 0.55, 0.62),
        roof_jitter=0.05,
        roof_noise=0.03,
        rubble_color=(0.55, 0.52, 0.48),
        rubble_noise=0.12,
        sensor_noise=0.025,
        brightness=0.03,
    )


STYLE_PRESETS = {"source": source_style, "target": target_style}


@dataclass(frozen=True)
class SyntheticSceneConfig:
    tile_height: int = 256
    tile_width: int = 256
    buildings_min: int = 2
    buildings_max: int = 5
    building_size_min: int = 24
    building_size_max: int = 64
    pair_damage_fraction: float = 0.5
    building_damage_prob: float = 0.6
    partial_fraction: float = 0.0
    style: SyntheticStyle = field(default_factory=source_style)
    oracle_intact_confidence: float = 0.9
    oracle_damaged_confidence: float = 0.2
    oracle_partial_confidence: float = 0.8
    oracle_prompt: str = "Building"


@dataclass(frozen=True)
class Building:
    top: int
    left: int
    height: int
    width: int
    state: str  # one of BUILDING_STATES
    color_jitter: tuple[float, float, float]

    @property
    def damaged(self) -> bool:
        return self.state in ("destroyed", "partial")

    def slices(self) -> tuple[slice, slice]:
        return slice(self.top, self.top + self.height), slice(self.left, self.left + self.width)


@dataclass(frozen=True)
class SyntheticScene:
    """Everything needed to re-render one pair deterministically."""

    pair_id: str
    tile_height: int
    tile_width: int
    noise_seed: int
    buildings: tuple[Building, ...]


def sample_scene(rng: np.random.Generator, config: SyntheticSceneConfig, pair_id: str) -> SyntheticScene:
    """Draw building placements and damage flags for one pair."""
    n_buildings = int(rng.integers(config.buildings_min, config.buildings_max + 1))
    damaged_pair = bool(rng.random() < config.pair_damage_fraction)

    placed: list[tuple[int, int, int, int]] = []
    for _ in range(n_buildings):
        for _attempt in range(50):
            h = int(rng.integers(config.building_size_min, config.building_size_max + 1))
            w = int(rng.integers(config.building_size_min, config.building_size_max + 1))
            if h + 2 >= config.tile_height or w + 2 >= config.tile_width:
                continue
            top = int(rng.integers(1, config.tile_height - h - 1))
            left = int(rng.integers(1, config.tile_width - w - 1))
            if all(
                top + h <= t or t + hh <= top or left + w <= l or l + ww <= left
                for t, l, hh, ww in placed
            ):
                placed.append((top, left, h, w))
                break

    states = ["intact"] * len(placed)
    if damaged_pair and placed:
        flags = rng.random(len(placed)) < config.building_damage_prob
        if not flags.any():
            flags[int(rng.integers(0, len(placed)))] = True
        for i, flagged in enumerate(flags):
            if flagged:
                partial = rng.random() < config.partial_fraction
                states[i] = "partial" if partial else "destroyed"

    buildings = tuple(
        Building(
            top=top,
            left=left,
            height=h,
            width=w,
            state=state,
            color_jitter=tuple(float(v) for v in rng.uniform(-1.0, 1.0, size=3)),
        )
        for (top, left, h, w), state in zip(placed, states)
    )
    noise_seed = int(rng.integers(0, 2**31 - 1))
    return SyntheticScene(
        pair_id=pair_id,
        tile_height=config.tile_height,
        tile_width=config.tile_width,
        noise_seed=noise_seed,
        buildings=buildings,
    )


def scene_ground_truth(scene: SyntheticScene) -> np.ndarray:
    """Union of damaged building footprints, exactly."""
    gt = np.zeros((scene.tile_height, scene.tile_width), dtype=np.uint8)
    for b in scene.buildings:
        if b.damaged:
            rows, cols = b.slices()
            gt[rows, cols] = 1
    return gt


def _textured(rng: np.random.Generator, shape, color, noise) -> np.ndarray:
    base = np.broadcast_to(np.asarray(color, dtype=np.float32), shape).copy()
    if noise > 0:
        base += rng.normal(0.0, noise, size=shape).astype(np.float32)
    return base


def render_scene(scene: SyntheticScene, style: SyntheticStyle) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render (pre, post, gt); tiles are uint8-quantized float arrays in [0, 1]."""
    rng = np.random.default_rng(scene.noise_seed)
    shape = (scene.tile_height, scene.tile_width, 3)
    roof = np.asarray(style.roof_color, dtype=np.float32)
    rubble = np.asarray(style.rubble_color, dtype=np.float32)

    images = {}
    for phase in ("pre", "post"):
        img = _textured(rng, shape, style.background_color, style.background_noise)
        for b in scene.buildings:
            rows, cols = b.slices()
            patch_shape = (b.height, b.width, 3)
            base_color = np.clip(roof + np.asarray(b.color_jitter, dtype=np.float32) * style.roof_jitter, 0.0, 1.0)
            if phase == "pre" or b.state == "intact":
                patch = _textured(rng, patch_shape, base_color, style.roof_noise)
            elif b.state == "destroyed":
                patch = _textured(rng, patch_shape, rubble, style.rubble_noise)
            else:  # partial: roof washed halfway toward rubble plus speckle
                blended = 0.5 * base_color + 0.5 * rubble
                patch = _textured(rng, patch_shape, blended, style.rubble_noise * 0.6)
            img[rows, cols] = patch
        img += style.brightness
        if style.sensor_noise > 0:
            img += rng.normal(0.0, style.sensor_noise, size=shape).astype(np.float32)
        quantized = np.clip(np.rint(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
        images[phase] = quantized.astype(np.float32) / 255.0

    return images["pre"], images["post"], scene_ground_truth(scene)


def oracle_confidence(scene: SyntheticScene, config: SyntheticSceneConfig, phase: str) -> list[dict]:
    """Per-building confidence regions the oracle segmenter should report."""
    regions = []
    for b in scene.buildings:
        if phase == "pre" or b.state == "intact":
            conf = config.oracle_intact_confidence
        elif b.state == "destroyed":
            conf = config.oracle_damaged_confidence
        else:
            conf = config.oracle_partial_confidence
        regions.append(
            {"rect": [b.top, b.left, b.top + b.height, b.left + b.width], "confidence": conf}
        )
    return regions


def generate_synthetic_dataset(
    config: SyntheticSceneConfig,
    n_pairs: int,
    out_dir,
    seed: int,
    role: str = "target",
):
    """Write tiles, ground truth, a manifest and the oracle segmenter config.

    Returns (manifest, oracle_index). Regenerating with the same arguments
    yields byte-identical files.
    """
    # Imported here: segmenters needs data.arrayio, so the oracle index type
    # cannot be imported at module load time without a cycle.
    from ..segmenters import OracleIndex, image_content_hash

    if n_pairs <= 0:
        raise ValidationError(f"n_pairs must be positive, got {n_pairs}")
    out_dir = Path(out_dir)
    for sub in ("pre", "post", "gt"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    records: list[PairRecord] = []
    oracle = OracleIndex(prompt=config.oracle_prompt)
    scenes: list[SyntheticScene] = []
    for idx in range(n_pairs):
        pair_id = f"pair_{idx:04d}"
        scene = sample_scene(rng, config, pair_id)
        scenes.append(scene)
        pre, post, gt = render_scene(scene, config.style)

        pre_path = out_dir / "pre" / f"{pair_id}.png"
        post_path = out_dir / "post" / f"{pair_id}.png"
        gt_path = out_dir / "gt" / f"{pair_id}.png"
        save_tile(pre_path, pre)
        save_tile(post_path, post)
        write_binary_map(gt_path, gt)
        records.append(PairRecord(pair_id=pair_id, pre=pre_path, post=post_path, gt=gt_path))

        oracle.add(image_content_hash(pre), oracle_confidence(scene, config, "pre"))
        oracle.add(image_content_hash(post), oracle_confidence(scene, config, "post"))

    manifest = DatasetManifest(role=role, pairs=records, path=out_dir / "manifest.json")
    save_manifest(manifest, out_dir / "manifest.json")
    oracle.save(out_dir / "oracle.json")
    _save_scene_log(scenes, config, seed, out_dir / "scenes.json")
    return manifest, oracle


def _save_scene_log(scenes, config: SyntheticSceneConfig, seed: int, path: Path) -> None:
    doc = {
        "format": "davi-scenes/1",
        "seed": seed,
        "config": asdict(config),
        "scenes": [asdict(s) for s in scenes],
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def style_from_spec(spec: Optional[str]) -> SyntheticStyle:
    """Resolve a style preset name or a JSON file of style fields."""
    if spec is None:
        return source_style()
    if spec in STYLE_PRESETS:
        return STYLE_PRESETS[spec]()
    path = Path(spec)
    if not path.is_file():
        raise ValidationError(f"unknown style {spec!r}; use a preset {tuple(STYLE_PRESETS)} or a JSON file")
    fields = json.loads(path.read_text())
    try:
        return replace(SyntheticStyle(), **{k: tuple(v) if isinstance(v, list) else v for k, v in fields.items()})
    except TypeError as exc:
        raise ValidationError(f"{path}: bad style fields ({exc})") from exc
