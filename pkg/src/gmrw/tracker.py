"""Long-range tracking from pairwise expected motion.

Positions are advected continuously: the per-cell flow field is sampled
bilinearly at the current sub-pixel location. Visibility comes from a
forward-backward cycle test.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from gmrw.backbone import SUPPORTED_STRIDES, to_tensor
from gmrw.core import (
    DimensionError,
    MotionField,
    QueryPoint,
    RangeError,
    TrackSet,
    VideoClip,
    grid_coordinates,
    validate_clip,
)
from gmrw.objective import expected_flow

MODES = ("chained", "direct")
DEFAULT_STRIDE = {"chained": 1, "direct": 2}


@dataclass
class TrackerConfig:
    mode: str = "chained"
    eval_stride: int | None = None  # None picks the per-mode default
    cycle_threshold: float = 3.0  # pixels
    batch_pairs: int = 4

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.eval_stride is not None and self.eval_stride not in SUPPORTED_STRIDES:
            raise ValueError(f"eval_stride must be one of {SUPPORTED_STRIDES}, got {self.eval_stride}")
        if self.cycle_threshold <= 0:
            raise ValueError(f"cycle_threshold must be positive, got {self.cycle_threshold}")

    @property
    def stride(self) -> int:
        return self.eval_stride if self.eval_stride is not None else DEFAULT_STRIDE[self.mode]


def sample_flow(field: MotionField, points: np.ndarray) -> np.ndarray:
    """Bilinearly interpolate a motion field at (m, 2) pixel positions (clamped to the grid)."""
    g = field.grid
    img = field.as_image()
    offset = (g.stride - 1) / 2
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    gx = np.clip((pts[:, 0] - offset) / g.stride, 0, g.width - 1)
    gy = np.clip((pts[:, 1] - offset) / g.stride, 0, g.height - 1)
    x0 = np.minimum(np.floor(gx).astype(int), max(g.width - 2, 0))
    y0 = np.minimum(np.floor(gy).astype(int), max(g.height - 2, 0))
    x1 = np.minimum(x0 + 1, g.width - 1)
    y1 = np.minimum(y0 + 1, g.height - 1)
    fx = (gx - x0)[:, None]
    fy = (gy - y0)[:, None]
    return ((1 - fx) * (1 - fy) * img[y0, x0] + fx * (1 - fy) * img[y0, x1]
            + (1 - fx) * fy * img[y1, x0] + fx * fy * img[y1, x1])


def _frame_extent(field: MotionField):
    g = field.grid
    return g.width * g.stride, g.height * g.stride


def _inside(points: np.ndarray, width: int, height: int) -> np.ndarray:
    return ((points[:, 0] >= -0.5) & (points[:, 0] <= width - 0.5)
            & (points[:, 1] >= -0.5) & (points[:, 1] <= height - 0.5))


def cycle_errors(fwd: MotionField, bwd: MotionField, points) -> tuple[np.ndarray, np.ndarray]:
    """Forward-backward return distance and in-frame flag of the advected points."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    w, h = _frame_extent(fwd)
    moved = pts + sample_flow(fwd, pts)
    back = moved + sample_flow(bwd, moved)
    return np.linalg.norm(back - pts, axis=-1), _inside(moved, w, h)


def cycle_visibility(fwd: MotionField, bwd: MotionField, point, threshold: float = 3.0) -> bool:
    """True when forward-then-backward motion returns within ``threshold`` px of ``point``."""
    err, inside = cycle_errors(fwd, bwd, point)
    return bool(inside[0] and err[0] <= threshold)


class PairMotionCache:
    """Computes and memoizes motion fields for frame pairs of one clip."""

    def __init__(self, clip: VideoClip, model, stride: int, batch_pairs: int = 4):
        self.frames = np.asarray(clip.frames)
        self.model = model
        self.stride = stride
        self.batch_pairs = max(1, int(batch_pairs))
        self.grid = grid_coordinates(clip.height, clip.width, stride)
        self._fields: dict[tuple[int, int], MotionField] = {}
        self._dtype = next(model.parameters()).dtype

    def prefetch(self, pairs: Sequence[tuple[int, int]]) -> None:
        todo = []
        for a, b in pairs:
            if (a, b) not in self._fields and (a, b) not in todo and (b, a) not in todo:
                todo.append((a, b))
        for i in range(0, len(todo), self.batch_pairs):
            chunk = todo[i:i + self.batch_pairs]
            fa = to_tensor(self.frames[[a for a, _ in chunk]], self._dtype)
            fb = to_tensor(self.frames[[b for _, b in chunk]], self._dtype)
            with torch.no_grad():
                a_ab, a_ba = self.model.pair_transitions(fa, fb, self.stride)
                f_ab = expected_flow(a_ab, self.grid).cpu().numpy()
                f_ba = expected_flow(a_ba, self.grid).cpu().numpy()
            for k, (a, b) in enumerate(chunk):
                self._fields[(a, b)] = MotionField(f_ab[k].astype(np.float64), self.grid)
                self._fields[(b, a)] = MotionField(f_ba[k].astype(np.float64), self.grid)

    def get(self, a: int, b: int) -> MotionField:
        if (a, b) not in self._fields:
            self.prefetch([(a, b)])
        return self._fields[(a, b)]


def pair_motion(frame_a, frame_b, model, stride: int = 4) -> tuple[MotionField, MotionField]:
    """Forward (a -> b) and backward (b -> a) expected motion for two H x W x 3 frames."""
    frame_a, frame_b = np.asarray(frame_a), np.asarray(frame_b)
    if frame_a.shape != frame_b.shape:
        raise DimensionError(f"frame shapes differ: {frame_a.shape} vs {frame_b.shape}")
    cache = PairMotionCache(VideoClip(np.stack([frame_a, frame_b])), model, stride)
    return cache.get(0, 1), cache.get(1, 0)


def _check_queries(queries, clip: VideoClip) -> np.ndarray:
    q = np.asarray([tuple(p) for p in queries], dtype=np.float64).reshape(-1, 3)
    t, h, w = clip.num_frames, clip.height, clip.width
    bad = ((q[:, 0] < 0) | (q[:, 0] >= t) | (q[:, 0] != np.round(q[:, 0]))
           | (q[:, 1] < 0) | (q[:, 1] >= w) | (q[:, 2] < 0) | (q[:, 2] >= h))
    if bad.any():
        i = int(np.nonzero(bad)[0][0])
        raise RangeError(f"query {i} {tuple(q[i])} is outside the {t}x{h}x{w} clip")
    return q


def _prepare(clip, queries, config, model):
    stride = config.stride
    validate_clip(clip, stride)
    q = _check_queries(queries, clip)
    return stride, q


def track_chained(clip: VideoClip, queries: Sequence[QueryPoint], model,
                  config: TrackerConfig | None = None, ids=None) -> TrackSet:
    """Chain adjacent-frame motion forward and backward in time from each query frame."""
    config = config or TrackerConfig(mode="chained")
    stride, q = _prepare(clip, queries, config, model)
    n, t = len(q), clip.num_frames
    cache = PairMotionCache(clip, model, stride, config.batch_pairs)
    tq = q[:, 0].astype(int)
    lo, hi = (int(tq.min()), int(tq.max())) if n else (0, 0)
    cache.prefetch([(i, i + 1) for i in range(t - 1)] if n else [])

    positions = np.zeros((n, t, 2))
    visible = np.zeros((n, t), dtype=bool)
    positions[np.arange(n), tq] = q[:, 1:]
    visible[np.arange(n), tq] = True
    for step in (1, -1):
        frames = range(lo, t - 1) if step == 1 else range(hi, 0, -1)
        for f in frames:
            # queries whose walk is already underway at frame f
            active = np.nonzero(tq <= f)[0] if step == 1 else np.nonzero(tq >= f)[0]
            if active.size == 0:
                continue
            fwd, bwd = cache.get(f, f + step), cache.get(f + step, f)
            pts = positions[active, f]
            err, inside = cycle_errors(fwd, bwd, pts)
            positions[active, f + step] = pts + sample_flow(fwd, pts)
            visible[active, f + step] = inside & (err <= config.cycle_threshold)
    return TrackSet(positions, visible, q, list(ids) if ids is not None else [])


def track_direct(clip: VideoClip, queries: Sequence[QueryPoint], model,
                 config: TrackerConfig | None = None, ids=None) -> TrackSet:
    """Match each query frame directly against every other frame."""
    config = config or TrackerConfig(mode="direct")
    stride, q = _prepare(clip, queries, config, model)
    n, t = len(q), clip.num_frames
    cache = PairMotionCache(clip, model, stride, config.batch_pairs)
    tq = q[:, 0].astype(int)
    query_frames = sorted(set(tq.tolist()))
    cache.prefetch([(a, b) for a in query_frames for b in range(t) if b != a])

    positions = np.zeros((n, t, 2))
    visible = np.zeros((n, t), dtype=bool)
    for a in query_frames:
        rows = np.nonzero(tq == a)[0]
        pts = q[rows, 1:]
        for b in range(t):
            if b == a:
                positions[rows, b] = pts
                visible[rows, b] = True
                continue
            fwd, bwd = cache.get(a, b), cache.get(b, a)
            err, inside = cycle_errors(fwd, bwd, pts)
            positions[rows, b] = pts + sample_flow(fwd, pts)
            visible[rows, b] = inside & (err <= config.cycle_threshold)
    return TrackSet(positions, visible, q, list(ids) if ids is not None else [])


def track(clip: VideoClip, queries, model, config: TrackerConfig, ids=None) -> TrackSet:
    fn = track_chained if config.mode == "chained" else track_direct
    return fn(clip, queries, model, config, ids=ids)
