"""Reference change-detection backbone.

A small siamese encoder (shared weights over the pre/post branches) with
squared feature differencing at three scales and a light decoder back to
full resolution, ending in a sigmoid so outputs are per-pixel change
probabilities in [0, 1]. Every stage is smooth (SiLU, GroupNorm, average
pooling, bilinear upsampling), which keeps finite-difference gradient
checks clean and makes CPU runs deterministic.

Heavier drop-in backbones register under a new architecture id and only
need to map (pre, post) batches of shape (B, 3, H, W) to (B, H, W)
probabilities.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .errors import ValidationError


class _ConvBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1)
        self.norm = nn.GroupNorm(min(4, out_ch), out_ch)
        self.act = nn.SiLU()

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class SiameseDiffNet(nn.Module):
    """Shared-weight encoder, squared multi-scale differencing, sigmoid head."""

    def __init__(self, base_channels: int = 16):
        super().__init__()
        c = base_channels
        self.enc1 = nn.Sequential(_ConvBlock(3, c), _ConvBlock(c, c))
        self.enc2 = nn.Sequential(_ConvBlock(c, 2 * c), _ConvBlock(2 * c, 2 * c))
        self.enc3 = _ConvBlock(2 * c, 4 * c)
        self.pool = nn.AvgPool2d(2)
        self.up = nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False)
        self.dec2 = _ConvBlock(6 * c, 2 * c)
        self.dec1 = _ConvBlock(3 * c, c)
        self.head = nn.Conv2d(c, 1, kernel_size=1)

    def _encode(self, x):
        f1 = self.enc1(x)
        f2 = self.enc2(self.pool(f1))
        f3 = self.enc3(self.pool(f2))
        return f1, f2, f3

    def forward(self, pre: torch.Tensor, post: torch.Tensor) -> torch.Tensor:
        if pre.shape != post.shape:
            raise ValidationError(f"pre/post batch shapes differ: {tuple(pre.shape)} vs {tuple(post.shape)}")
        if pre.shape[-1] % 4 or pre.shape[-2] % 4:
            raise ValidationError(
                f"spatial dims must be divisible by 4, got {tuple(pre.shape[-2:])}"
            )
        f1p, f2p, f3p = self._encode(pre)
        f1q, f2q, f3q = self._encode(post)
        d3 = (f3p - f3q) ** 2
        d2 = (f2p - f2q) ** 2
        d1 = (f1p - f1q) ** 2
        x = self.dec2(torch.cat([self.up(d3), d2], dim=1))
        x = self.dec1(torch.cat([self.up(x), d1], dim=1))
        return torch.sigmoid(self.head(x)).squeeze(1)


ARCHITECTURES = {
    "siamdiff-small": {"base_channels": 16},
    "siamdiff-tiny": {"base_channels": 8},
    "siamdiff-micro": {"base_channels": 4},
}


def build_model(arch_id: str) -> nn.Module:
    """Instantiate a registered backbone (weights are torch-seeded by the caller)."""
    if arch_id not in ARCHITECTURES:
        raise ValidationError(f"unknown architecture {arch_id!r}, expected one of {sorted(ARCHITECTURES)}")
    return SiameseDiffNet(**ARCHITECTURES[arch_id])
