"""Shared domain types and the pixel coordinate convention.

Coordinates are (x, y) with x pointing right and y pointing down. Integer
coordinates are pixel centers, so the top-left pixel covers [-0.5, 0.5)^2.
A feature grid with effective stride ``s`` places cell (r, q) at pixel
``(q*s + (s-1)/2, r*s + (s-1)/2)``; with ``s == 1`` cells coincide with pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np


class GMRWError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(GMRWError, ValueError):
    pass


class RangeError(GMRWError, ValueError):
    pass


class ShapeError(GMRWError, ValueError):
    pass


class QueryPoint(NamedTuple):
    t: int
    x: float
    y: float


@dataclass
class VideoClip:
    """A T x H x W x 3 clip with color values in [0, 1]."""

    frames: np.ndarray
    frame_rate: Optional[float] = None

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def height(self) -> int:
        return int(self.frames.shape[1])

    @property
    def width(self) -> int:
        return int(self.frames.shape[2])

    def __len__(self) -> int:
        return self.num_frames


@dataclass
class Track:
    positions: np.ndarray  # (T, 2)
    visibility: np.ndarray  # (T,) bool


@dataclass
class TrackSet:
    """N tracks over T frames, each tied to the query that produced it.

    Used both for predictions and for ground truth.
    """

    positions: np.ndarray  # (N, T, 2)
    visibility: np.ndarray  # (N, T) bool
    queries: np.ndarray  # (N, 3) as (t, x, y)
    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.visibility = np.asarray(self.visibility, dtype=bool)
        self.queries = np.asarray(self.queries, dtype=np.float64).reshape(-1, 3)
        if not self.ids:
            self.ids = [str(i) for i in range(len(self.queries))]
        n = len(self.queries)
        if self.positions.shape[:1] != (n,) or self.positions.shape[-1:] != (2,):
            raise ShapeError(f"positions shape {self.positions.shape} does not match {n} queries")
        if self.visibility.shape != self.positions.shape[:2]:
            raise ShapeError(
                f"visibility shape {self.visibility.shape} does not match positions {self.positions.shape}"
            )
        if len(self.ids) != n:
            raise ShapeError(f"{len(self.ids)} ids for {n} queries")

    def __len__(self) -> int:
        return len(self.queries)

    def __getitem__(self, i: int) -> Track:
        return Track(self.positions[i], self.visibility[i])

    @property
    def num_frames(self) -> int:
        return int(self.positions.shape[1])

    def query_points(self) -> list[QueryPoint]:
        return [QueryPoint(int(t), float(x), float(y)) for t, x, y in self.queries]

    def subset(self, index: Sequence[int]) -> "TrackSet":
        index = list(index)
        return TrackSet(
            self.positions[index],
            self.visibility[index],
            self.queries[index],
            [self.ids[i] for i in index],
        )


GroundTruthTrackSet = TrackSet


@dataclass(frozen=True)
class CoordinateGrid:
    """Pixel-center coordinates of feature cells, row-major, shape (n, 2)."""

    coords: np.ndarray
    height: int  # rows of cells
    width: int  # columns of cells
    stride: int

    def __len__(self) -> int:
        return self.height * self.width

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def index_of(self, xy: np.ndarray) -> np.ndarray:
        """Nearest cell index for pixel coordinates ``xy`` of shape (..., 2)."""
        xy = np.asarray(xy, dtype=np.float64)
        offset = (self.stride - 1) / 2
        q = np.clip(np.rint((xy[..., 0] - offset) / self.stride), 0, self.width - 1)
        r = np.clip(np.rint((xy[..., 1] - offset) / self.stride), 0, self.height - 1)
        return (r * self.width + q).astype(np.int64)


def grid_coordinates(height: int, width: int, effective_stride: int) -> CoordinateGrid:
    s = int(effective_stride)
    if s < 1:
        raise DimensionError(f"effective stride must be positive, got {effective_stride}")
    if height % s or width % s:
        raise DimensionError(f"{height}x{width} is not divisible by stride {s}")
    h, w = height // s, width // s
    offset = (s - 1) / 2
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    coords = np.stack([cols * s + offset, rows * s + offset], axis=-1).reshape(-1, 2)
    return CoordinateGrid(coords.astype(np.float64), h, w, s)


def validate_clip(clip: VideoClip, stride: int = 4) -> VideoClip:
    """Check clip invariants and return it unchanged.

    ``stride`` is the pixel divisor frames must respect, i.e. the backbone
    downsampling factor on the identity path.
    """
    frames = np.asarray(clip.frames)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise DimensionError(f"expected T x H x W x 3 frames, got shape {frames.shape}")
    t, h, w, _ = frames.shape
    if t < 2:
        raise DimensionError(f"a clip needs at least 2 frames, got {t}")
    if h % stride or w % stride:
        raise DimensionError(f"frame size {h}x{w} is not divisible by stride {stride}")
    if not np.all(np.isfinite(frames)):
        raise RangeError("clip contains non-finite values")
    lo, hi = float(frames.min()), float(frames.max())
    if lo < 0.0 or hi > 1.0:
        raise RangeError(f"clip values must lie in [0, 1], found [{lo:g}, {hi:g}]")
    return clip


@dataclass
class MotionField:
    """Per-cell displacement in pixels, aligned with ``grid`` (row-major)."""

    flow: np.ndarray  # (n, 2)
    grid: CoordinateGrid

    def as_image(self) -> np.ndarray:
        return np.asarray(self.flow).reshape(self.grid.height, self.grid.width, 2)
