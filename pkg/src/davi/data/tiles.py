"""Tile loading, normalization and raster output.

Images are 8-bit RGB on disk and float32 in [0, 1] in memory (plain /255
normalization, no per-image standardization, so segmenter confidences and
model inputs share one scale). Binary maps round-trip through single-channel
PNG with 0 -> 0 and 1 -> 255.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import MissingArtifactError, ValidationError
from ..validation import check_binary_map, check_probability_map
from . import arrayio


def load_tile(path) -> np.ndarray:
    """Load an RGB tile as float32 (H, W, 3) normalized to [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"image not found: {path}")
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"{path}: not a decodable image ({exc})") from exc
    return arr.astype(np.float32) / 255.0


def save_tile(path, tile: np.ndarray) -> None:
    """Write a float32 [0, 1] RGB tile as 8-bit PNG."""
    arr = np.asarray(tile, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError(f"tile must have shape (H, W, 3), got {arr.shape}")
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(Path(path), format="PNG")


def binarize_damage_levels(levels) -> np.ndarray:
    """Collapse a 4-level damage grid to binary: 0 stays 0, levels 1-3 become 1."""
    arr = np.asarray(levels)
    if arr.ndim != 2:
        raise ValidationError(f"damage-level grid must be 2-D, got shape {arr.shape}")
    if not np.isin(arr, (0, 1, 2, 3)).all():
        bad = sorted(set(np.unique(arr)) - {0, 1, 2, 3})
        raise ValidationError(f"damage levels must be in {{0, 1, 2, 3}}, found {bad}")
    return (arr > 0).astype(np.uint8)


def load_ground_truth(path) -> np.ndarray:
    """Load a ground-truth raster as a {0, 1} map.

    Accepts binary rasters stored as {0, 255} and raw 4-level damage rasters
    stored as {0, 1, 2, 3}; anything else is rejected.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"ground truth not found: {path}")
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.uint8)
    values = set(np.unique(arr))
    if values <= {0, 255}:
        return (arr == 255).astype(np.uint8)
    if values <= {0, 1, 2, 3}:
        return binarize_damage_levels(arr)
    raise ValidationError(
        f"{path}: ground-truth values must be {{0, 255}} or damage levels "
        f"{{0, 1, 2, 3}}, found {sorted(values)[:8]}"
    )


def write_binary_map(path, m: np.ndarray) -> None:
    """Write a {0, 1} map as an 8-bit single-channel PNG with {0 -> 0, 1 -> 255}."""
    m = check_binary_map(m)
    Image.fromarray(m * np.uint8(255), mode="L").save(Path(path), format="PNG")


def read_binary_map(path) -> np.ndarray:
    """Read a binary raster written by :func:`write_binary_map`."""
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"binary raster not found: {path}")
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.uint8)
    values = set(np.unique(arr))
    if not values <= {0, 255}:
        raise ValidationError(f"{path}: binary raster values must be {{0, 255}}")
    return (arr == 255).astype(np.uint8)


def write_probability_map(path, p: np.ndarray) -> None:
    """Write a probability grid to the portable array container."""
    arrayio.save_array(path, check_probability_map(p))


def read_probability_map(path) -> np.ndarray:
    """Read a probability grid from the portable array container."""
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"probability map not found: {path}")
    return check_probability_map(arrayio.load_array(path))
