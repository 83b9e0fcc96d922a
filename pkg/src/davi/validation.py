"""Input validation helpers for grids, tiles and estimator inputs.

All checkers return a canonical ndarray (copying only when the dtype or
layout has to change) and raise :class:`~davi.errors.ValidationError` on
contract violations, so estimators and grid ops can share one vocabulary.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def check_probability_map(p, name: str = "probability map") -> np.ndarray:
    """Validate a 2-D grid of probabilities in [0, 1], returned as float32."""
    arr = np.asarray(p, dtype=np.float32)
    if arr.ndim != 2 or arr.size == 0:
        raise ValidationError(f"{name} must be a non-empty 2-D grid, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValidationError(
            f"{name} values must lie in [0, 1], got range "
            f"[{arr.min():.6g}, {arr.max():.6g}]"
        )
    return arr


def check_binary_map(m, name: str = "binary map") -> np.ndarray:
    """Validate a 2-D grid whose values are exactly 0 or 1, returned as uint8."""
    arr = np.asarray(m)
    if arr.ndim != 2 or arr.size == 0:
        raise ValidationError(f"{name} must be a non-empty 2-D grid, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ValidationError(f"{name} values must be exactly 0 or 1")
    return arr.astype(np.uint8)


def check_same_shape(*named_arrays: tuple[str, np.ndarray]) -> None:
    """Raise unless every named array shares one shape."""
    shapes = {name: arr.shape for name, arr in named_arrays}
    if len(set(shapes.values())) > 1:
        detail = ", ".join(f"{name}={shape}" for name, shape in shapes.items())
        raise ValidationError(f"shape mismatch: {detail}")


def check_image_tile(img, name: str = "image") -> np.ndarray:
    """Validate an (H, W, 3) tile with values in [0, 1], returned as float32."""
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValidationError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValidationError(f"{name} values must lie in [0, 1]")
    return arr


def check_pair(pre, post) -> tuple[np.ndarray, np.ndarray]:
    """Validate a co-registered pre/post tile pair."""
    pre = check_image_tile(pre, "pre image")
    post = check_image_tile(post, "post image")
    check_same_shape(("pre image", pre), ("post image", post))
    return pre, post


def check_pairs_array(X, name: str = "X") -> np.ndarray:
    """Validate estimator input as an (N, 2, H, W, 3) float32 array.

    Accepts either that array directly or a sequence of (pre, post) tuples.
    """
    if isinstance(X, np.ndarray) and X.ndim == 5:
        arr = X.astype(np.float32, copy=False)
    else:
        try:
            pairs = [check_pair(pre, post) for pre, post in X]
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(
                f"{name} must be an (N, 2, H, W, 3) array or a sequence of "
                f"(pre, post) tuples"
            ) from exc
        if not pairs:
            raise ValidationError(f"{name} must contain at least one image pair")
        arr = np.stack([np.stack(p) for p in pairs]).astype(np.float32)
    if arr.shape[1] != 2 or arr.shape[-1] != 3:
        raise ValidationError(f"{name} must have shape (N, 2, H, W, 3), got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValidationError(f"{name} must contain at least one image pair")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValidationError(f"{name} values must lie in [0, 1]")
    return arr


def check_target_maps(y, n_pairs: int, shape: tuple[int, int]) -> np.ndarray:
    """Validate supervised targets as an (N, H, W) array of {0, 1}."""
    arr = np.asarray(y)
    if arr.ndim != 3 or arr.shape[0] != n_pairs or arr.shape[1:] != shape:
        raise ValidationError(
            f"y must have shape ({n_pairs}, {shape[0]}, {shape[1]}), got {arr.shape}"
        )
    if not np.isin(arr, (0, 1)).all():
        raise ValidationError("y values must be exactly 0 or 1")
    return arr.astype(np.uint8)
