"""Global-matching transformer and random-walk transition matrices.

Two feature grids are refined jointly: every layer applies self-attention to
each stream, cross-attention in which a stream queries the other stream's keys
and values, and a feed-forward network. Weights are shared between streams, so
swapping the inputs swaps the outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from gmrw.backbone import FeatureGrid
from gmrw.core import RangeError, ShapeError


@dataclass
class MatcherConfig:
    num_layers: int = 6
    num_heads: int = 1
    ffn_expansion: int = 2
    temperature: Optional[float] = None  # None means sqrt(feature_dim)
    use_shifted_windows: bool = False
    window_size: int = 8

    def __post_init__(self):
        if self.num_layers < 1 or self.num_heads < 1 or self.window_size < 1:
            raise ValueError("num_layers, num_heads and window_size must be positive")
        if self.temperature is not None and self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    def resolved_temperature(self, feature_dim: int) -> float:
        return self.temperature if self.temperature is not None else math.sqrt(feature_dim)


@dataclass
class CorrelationFeatures:
    f_t: torch.Tensor  # (..., n, d)
    f_t1: torch.Tensor
    grid_shape: tuple[int, int]


@dataclass
class TransitionMatrix:
    probs: torch.Tensor  # (..., n, m), rows sum to one
    source_grid: tuple[int, int]
    target_grid: tuple[int, int]


def _window_partition(x, h, w, ws):
    # (B, h*w, d) -> (B * nw, ws*ws, d)
    b, _, d = x.shape
    x = x.view(b, h // ws, ws, w // ws, ws, d).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(-1, ws * ws, d)


def _window_merge(x, b, h, w, ws):
    d = x.shape[-1]
    x = x.view(b, h // ws, w // ws, ws, ws, d).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(b, h * w, d)


def _shift_mask(h, w, ws, shift, device):
    """Additive mask blocking attention across regions that wrap around after a roll."""
    region = torch.zeros(h, w, device=device)
    count = 0
    for ys in (slice(0, -ws), slice(-ws, -shift), slice(-shift, None)):
        for xs in (slice(0, -ws), slice(-ws, -shift), slice(-shift, None)):
            region[ys, xs] = count
            count += 1
    ids = _window_partition(region.view(1, h * w, 1), h, w, ws).squeeze(-1)  # (nw, ws*ws)
    mask = ids[:, :, None] != ids[:, None, :]
    return torch.zeros(mask.shape, device=device).masked_fill(mask, float("-inf"))


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"feature dim {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, source, mask=None):
        b, n, d = x.shape
        hd = d // self.num_heads

        def heads(t):
            return t.view(b, -1, self.num_heads, hd).transpose(1, 2)

        q, k, v = heads(self.q(x)), heads(self.k(source)), heads(self.v(source))
        if mask is not None:
            # mask: (nw, n, n) broadcast over batch groups of nw windows
            nw = mask.shape[0]
            mask = mask[None, :, None].expand(b // nw, nw, 1, n, mask.shape[-1]).reshape(b, 1, n, -1)
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=mask)
        return self.proj(out.transpose(1, 2).reshape(b, n, d))


class TransformerLayer(nn.Module):
    """Self-attention, cross-attention and feed-forward, pre-norm residual."""

    def __init__(self, dim: int, num_heads: int, ffn_expansion: int):
        super().__init__()
        self.norm_self = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, num_heads)
        self.norm_cross = nn.LayerNorm(dim)
        self.norm_source = nn.LayerNorm(dim)
        self.cross_attn = Attention(dim, num_heads)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, dim * ffn_expansion), nn.GELU(), nn.Linear(dim * ffn_expansion, dim)
        )

    def forward(self, x, grid_shape, window=None, shift=0):
        """``x`` is (2B, n, d): both streams stacked, first half attends to the second."""
        h, w = grid_shape
        b2 = x.shape[0]

        def attend(attn, a, src):
            if window is None:
                return attn(a, src)
            if shift:
                a = torch.roll(a.view(b2, h, w, -1), (-shift, -shift), (1, 2)).view(b2, h * w, -1)
                src = torch.roll(src.view(b2, h, w, -1), (-shift, -shift), (1, 2)).view(b2, h * w, -1)
            mask = _shift_mask(h, w, window, shift, a.device).to(a.dtype) if shift else None
            out = attn(_window_partition(a, h, w, window), _window_partition(src, h, w, window), mask)
            out = _window_merge(out, b2, h, w, window)
            if shift:
                out = torch.roll(out.view(b2, h, w, -1), (shift, shift), (1, 2)).view(b2, h * w, -1)
            return out

        y = self.norm_self(x)
        x = x + attend(self.self_attn, y, y)
        x_other = torch.cat([x[b2 // 2:], x[: b2 // 2]], dim=0)
        x = x + attend(self.cross_attn, self.norm_cross(x), self.norm_source(x_other))
        return x + self.ffn(self.norm_ffn(x))


class Matcher(nn.Module):
    def __init__(self, feature_dim: int, config: MatcherConfig):
        super().__init__()
        self.config = config
        self.feature_dim = feature_dim
        self.layers = nn.ModuleList(
            TransformerLayer(feature_dim, config.num_heads, config.ffn_expansion)
            for _ in range(config.num_layers)
        )

    @property
    def temperature(self) -> float:
        return self.config.resolved_temperature(self.feature_dim)

    def _window_for(self, grid_shape):
        cfg = self.config
        h, w = grid_shape
        if not cfg.use_shifted_windows or cfg.window_size >= max(h, w):
            return None
        if h % cfg.window_size or w % cfg.window_size:
            raise ShapeError(f"grid {h}x{w} not divisible by window size {cfg.window_size}")
        return cfg.window_size

    def forward(self, feat_a: torch.Tensor, feat_b: torch.Tensor):
        """(B, d, h, w) feature maps -> two (B, h*w, d) correlated token sets."""
        if feat_a.shape != feat_b.shape:
            raise ShapeError(f"feature shapes differ: {tuple(feat_a.shape)} vs {tuple(feat_b.shape)}")
        b, d, h, w = feat_a.shape
        if d != self.feature_dim:
            raise ShapeError(f"expected feature dim {self.feature_dim}, got {d}")
        x = torch.cat([feat_a, feat_b], dim=0).flatten(2).transpose(1, 2)
        window = self._window_for((h, w))
        for i, layer in enumerate(self.layers):
            shift = window // 2 if window is not None and i % 2 == 1 else 0
            x = layer(x, (h, w), window, shift)
        return x[:b], x[b:]


def correlate(feat_a: FeatureGrid, feat_b: FeatureGrid, matcher: Matcher) -> CorrelationFeatures:
    if feat_a.features.shape != feat_b.features.shape:
        raise ShapeError(
            f"feature grids differ: {tuple(feat_a.features.shape)} vs {tuple(feat_b.features.shape)}"
        )
    a = feat_a.features.permute(2, 0, 1)[None]
    b = feat_b.features.permute(2, 0, 1)[None]
    f_t, f_t1 = matcher(a, b)
    return CorrelationFeatures(f_t[0], f_t1[0], feat_a.grid_shape)


def transition_probs(f_src: torch.Tensor, f_dst: torch.Tensor, temperature: float) -> torch.Tensor:
    """Row softmax of f_src @ f_dst^T / temperature; works on batched (..., n, d) inputs."""
    return torch.softmax(f_src @ f_dst.transpose(-1, -2) / temperature, dim=-1)


def transition_matrix(corr: CorrelationFeatures, temperature: float) -> TransitionMatrix:
    if not (torch.isfinite(corr.f_t).all() and torch.isfinite(corr.f_t1).all()):
        raise RangeError("correlation features contain non-finite values")
    probs = transition_probs(corr.f_t, corr.f_t1, temperature)
    return TransitionMatrix(probs, corr.grid_shape, corr.grid_shape)


def chain(a: TransitionMatrix, b: TransitionMatrix) -> TransitionMatrix:
    if tuple(a.target_grid) != tuple(b.source_grid) or a.probs.shape[-1] != b.probs.shape[-2]:
        raise ShapeError(f"cannot chain {tuple(a.probs.shape)} with {tuple(b.probs.shape)}")
    return TransitionMatrix(a.probs @ b.probs, a.source_grid, b.target_grid)
