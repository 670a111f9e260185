"""Convolutional feature extractor with 2D sinusoidal positional encoding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from gmrw.core import DimensionError, ShapeError

SUPPORTED_STRIDES = (1, 2, 4)


@dataclass
class BackboneConfig:
    feature_dim: int = 64
    downsample_factor: int = 4
    num_conv_blocks: int = 1
    base_channels: int = 32
    positional_encoding_scale: float = 1.0

    def __post_init__(self):
        if self.feature_dim <= 0 or self.feature_dim % 2:
            raise ValueError(f"feature_dim must be a positive even integer, got {self.feature_dim}")
        c = self.downsample_factor
        if c < 1 or c & (c - 1):
            raise ValueError(f"downsample_factor must be a power of two, got {c}")
        if self.num_conv_blocks < 0 or self.base_channels <= 0:
            raise ValueError("num_conv_blocks must be >= 0 and base_channels > 0")


@dataclass
class FeatureGrid:
    features: torch.Tensor  # (h, w, d)
    source_shape: tuple[int, int]
    effective_stride: int

    @property
    def grid_shape(self) -> tuple[int, int]:
        return tuple(self.features.shape[:2])

    def flatten(self) -> torch.Tensor:
        return self.features.reshape(-1, self.features.shape[-1])


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.norm1 = nn.InstanceNorm2d(channels, affine=True)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.norm2 = nn.InstanceNorm2d(channels, affine=True)

    def forward(self, x):
        y = F.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return F.relu(x + y)


def positional_encoding_2d(height: int, width: int, dim: int, scale: float = 1.0,
                           temperature: float = 10000.0, dtype=torch.float32) -> torch.Tensor:
    """Sinusoidal encoding of normalized cell positions, shape (dim, height, width).

    The first half of the channels encodes y, the second half x. Positions are
    normalized to (0, 2*pi] so the encoding describes image location
    independently of the grid resolution.
    """
    half = dim // 2
    y = torch.arange(1, height + 1, dtype=dtype) / height * 2 * math.pi
    x = torch.arange(1, width + 1, dtype=dtype) / width * 2 * math.pi
    idx = torch.arange(half, dtype=dtype)
    freq = temperature ** (2 * torch.div(idx, 2, rounding_mode="floor") / half)

    def encode(pos):
        arg = pos[:, None] / freq  # (len, half)
        return torch.where(idx.long() % 2 == 0, torch.sin(arg), torch.cos(arg))

    ey = encode(y)[:, None, :].expand(height, width, half)
    ex = encode(x)[None, :, :].expand(height, width, half)
    return scale * torch.cat([ey, ex], dim=-1).permute(2, 0, 1).contiguous()


class Backbone(nn.Module):
    """Residual CNN downsampling by ``downsample_factor`` followed by a positional encoding.

    Each stride-2 stage is a strided convolution plus ``num_conv_blocks``
    residual blocks; channel width doubles per stage.
    """

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        stages = int(round(math.log2(config.downsample_factor)))
        ch = config.base_channels
        self.stem = nn.Sequential(
            nn.Conv2d(3, ch, 3, padding=1, bias=False), nn.InstanceNorm2d(ch, affine=True), nn.ReLU()
        )
        layers = []
        for _ in range(stages):
            out = ch * 2
            layers += [nn.Conv2d(ch, out, 3, stride=2, padding=1, bias=False),
                       nn.InstanceNorm2d(out, affine=True), nn.ReLU()]
            layers += [ResidualBlock(out) for _ in range(config.num_conv_blocks)]
            ch = out
        self.stages = nn.Sequential(*layers)
        self.head = nn.Conv2d(ch, config.feature_dim, 1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """(N, 3, H, W) images in [0, 1] -> (N, d, H/c, W/c) features with encoding added."""
        c = self.config.downsample_factor
        h, w = images.shape[-2:]
        if h % c or w % c:
            raise ShapeError(f"image size {h}x{w} is not divisible by downsample factor {c}")
        x = self.head(self.stages(self.stem(images * 2 - 1)))
        pe = positional_encoding_2d(x.shape[-2], x.shape[-1], self.config.feature_dim,
                                    self.config.positional_encoding_scale, dtype=x.dtype)
        return x + pe.to(x.device)


def upsample_for_stride(frames: torch.Tensor, stride: int, downsample_factor: int = 4) -> torch.Tensor:
    """Bilinearly upsample (N, 3, H, W) frames so features land every ``stride`` pixels.

    With the pixel-center convention the resulting feature cells sit exactly on
    the ``grid_coordinates(H, W, stride)`` centers.
    """
    if stride not in SUPPORTED_STRIDES or downsample_factor % stride:
        raise DimensionError(f"unsupported stride {stride}; expected one of {SUPPORTED_STRIDES}")
    factor = downsample_factor // stride
    if factor == 1:
        return frames
    return F.interpolate(frames, scale_factor=factor, mode="bilinear", align_corners=False)


def to_tensor(frames, dtype=torch.float32) -> torch.Tensor:
    """H x W x 3 or T x H x W x 3 arrays -> (N, 3, H, W) tensor."""
    t = torch.as_tensor(np.ascontiguousarray(frames), dtype=dtype)
    if t.ndim == 3:
        t = t[None]
    return t.permute(0, 3, 1, 2).contiguous()


def extract_features(frame, backbone: Backbone, stride: int = 4) -> FeatureGrid:
    """Features for a single H x W x 3 frame at the given sampling stride."""
    dtype = next(backbone.parameters()).dtype
    x = frame if isinstance(frame, torch.Tensor) and frame.ndim == 4 else to_tensor(frame, dtype)
    h, w = x.shape[-2:]
    if h % stride or w % stride:
        raise ShapeError(f"frame size {h}x{w} is not divisible by stride {stride}")
    feats = backbone(upsample_for_stride(x, stride, backbone.config.downsample_factor))
    return FeatureGrid(feats[0].permute(1, 2, 0), (int(h), int(w)), stride)
