"""Grid algebra for pseudo-label construction and the two loss functionals.

Everything here is pure: plain numpy in, plain numpy out, no state.
Probability grids are float32 in [0, 1]; binary grids are uint8 in {0, 1}.
Loss functions return the sum over pixels; callers that need a mean divide
by the pixel count themselves.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ValidationError
from .validation import check_binary_map, check_probability_map, check_same_shape

# Probabilities are clamped to [LOG_EPS, 1 - LOG_EPS] before any log. Small
# enough to perturb losses well below test tolerances, large enough to keep
# every log finite in float64.
LOG_EPS = 1e-7

LOSS_VARIANTS = ("single_term", "binary")


def binarize(p, threshold: float) -> np.ndarray:
    """Threshold a probability grid into {0, 1}; the comparison is inclusive."""
    p = check_probability_map(p)
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold must lie in [0, 1], got {threshold}")
    return (p >= np.float32(threshold)).astype(np.uint8)


def clipped_confidence_diff(w_pre, w_post) -> np.ndarray:
    """Per-pixel confidence drop max(0, w_pre - w_post).

    Clipping at zero keeps only disappearing structures; construction
    (confidence rising after the event) is deliberately ignored.
    """
    w_pre = check_probability_map(w_pre, "pre confidence map")
    w_post = check_probability_map(w_post, "post confidence map")
    check_same_shape(("pre confidence map", w_pre), ("post confidence map", w_post))
    return np.maximum(w_pre - w_post, 0.0).astype(np.float32)


def combine_max(a, b) -> np.ndarray:
    """Pixelwise maximum of two binary maps (logical OR)."""
    a = check_binary_map(a, "first binary map")
    b = check_binary_map(b, "second binary map")
    check_same_shape(("first binary map", a), ("second binary map", b))
    return np.maximum(a, b)


def consistency_update(mu, sigma, m0, tau_r: float) -> np.ndarray:
    """Adopt a confidently-positive pixel from the adapting model, else keep m0.

    A pixel flips to ``mu`` only where the cross-view deviation ``sigma`` is
    below ``tau_r`` AND ``mu`` is 1; every other pixel keeps the source
    model's decision ``m0``.
    """
    mu = check_binary_map(mu, "mu")
    m0 = check_binary_map(m0, "m0")
    sigma = np.asarray(sigma, dtype=np.float32)
    if sigma.ndim != 2:
        raise ValidationError(f"sigma must be a 2-D grid, got shape {sigma.shape}")
    if not np.isfinite(sigma).all() or sigma.min() < 0.0:
        raise ValidationError("sigma must be finite and nonnegative")
    check_same_shape(("mu", mu), ("sigma", sigma), ("m0", m0))
    if not tau_r > 0.0:
        raise ValidationError(f"tau_r must be positive, got {tau_r}")
    adopt = (sigma < np.float32(tau_r)) & (mu == 1)
    return np.where(adopt, mu, m0).astype(np.uint8)


def mean_std(maps: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Pixelwise mean and population standard deviation of >= 2 probability maps."""
    if len(maps) < 2:
        raise ValidationError(f"need at least 2 probability maps, got {len(maps)}")
    checked = [check_probability_map(m, f"map {i}") for i, m in enumerate(maps)]
    check_same_shape(*((f"map {i}", m) for i, m in enumerate(checked)))
    stack = np.stack(checked).astype(np.float64)
    mean = stack.mean(axis=0)
    std = stack.std(axis=0, ddof=0)
    return mean.astype(np.float32), std.astype(np.float32)


def coarse_label(m0) -> int:
    """Per-pair change bit: 1 iff the binary map has any positive pixel."""
    m0 = check_binary_map(m0, "m0")
    return int(m0.sum() > 0)


def mask_fine(q: int, mf) -> np.ndarray:
    """Zero out an entire fine-grained map when the coarse label says no change."""
    mf = check_binary_map(mf, "fine-grained map")
    if q not in (0, 1):
        raise ValidationError(f"coarse label must be 0 or 1, got {q}")
    if q == 0:
        return np.zeros_like(mf)
    return mf.copy()


def _clamped_float64(p) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=np.float64), LOG_EPS, 1.0 - LOG_EPS)


def _check_variant(variant: str) -> None:
    if variant not in LOSS_VARIANTS:
        raise ValidationError(f"unknown loss variant {variant!r}, expected one of {LOSS_VARIANTS}")


def prediction_entropy(p, variant: str = "binary") -> float:
    """Shannon entropy of a prediction grid, summed over pixels.

    ``single_term`` uses only -p*log(p); ``binary`` adds the complementary
    -(1-p)*log(1-p) term so the value is the full two-class entropy.
    """
    _check_variant(variant)
    p = check_probability_map(p)
    pc = _clamped_float64(p)
    total = -(pc * np.log(pc)).sum()
    if variant == "binary":
        total += -((1.0 - pc) * np.log(1.0 - pc)).sum()
    return float(total)


def pseudo_cross_entropy(mf, p, variant: str = "binary") -> float:
    """Cross entropy of predictions against a binary pseudo-label grid, summed.

    ``single_term`` scores only positive-label pixels via -mf*log(p);
    ``binary`` also penalizes negative-label pixels via -(1-mf)*log(1-p).
    """
    _check_variant(variant)
    mf = check_binary_map(mf, "pseudo label map")
    p = check_probability_map(p)
    check_same_shape(("pseudo label map", mf), ("probability map", p))
    pc = _clamped_float64(p)
    mf64 = mf.astype(np.float64)
    total = -(mf64 * np.log(pc)).sum()
    if variant == "binary":
        total += -((1.0 - mf64) * np.log(1.0 - pc)).sum()
    return float(total)
