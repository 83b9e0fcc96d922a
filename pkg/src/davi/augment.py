"""Photometric augmentations for consistency-based refinement.

Strictly geometry-preserving: pixel (i, j) corresponds across the original
and augmented views, and the same transform (including the same noise
field) is applied to both halves of a pair, so augmentation never injects
fake pre/post differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_image_tile


@dataclass(frozen=True)
class PhotometricAugmentation:
    """One sampled transform; ``noise_seed`` regenerates the shared noise field."""

    brightness_delta: float = 0.0
    contrast_factor: float = 1.0
    noise_std: float = 0.0
    noise_seed: int = 0

    def apply(self, image: np.ndarray) -> np.ndarray:
        img = check_image_tile(image)
        out = (img - 0.5) * np.float32(self.contrast_factor) + 0.5 + np.float32(self.brightness_delta)
        if self.noise_std > 0:
            rng = np.random.default_rng(self.noise_seed)
            out = out + rng.normal(0.0, self.noise_std, size=img.shape[:2]).astype(np.float32)[..., None]
        return np.clip(out, 0.0, 1.0)

    def apply_pair(self, pre: np.ndarray, post: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.apply(pre), self.apply(post)


def sample_augmentation(
    rng: np.random.Generator,
    brightness: float = 0.1,
    contrast: float = 0.1,
    noise_std: float = 0.02,
) -> PhotometricAugmentation:
    """Draw jitter amounts uniformly within the configured strengths."""
    return PhotometricAugmentation(
        brightness_delta=float(rng.uniform(-brightness, brightness)),
        contrast_factor=float(1.0 + rng.uniform(-contrast, contrast)),
        noise_std=float(abs(noise_std)),
        noise_seed=int(rng.integers(0, 2**31 - 1)),
    )
