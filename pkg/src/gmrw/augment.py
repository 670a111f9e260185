"""Resized-crop augmentations and warped cycle labels.

A crop is stored as a 2x3 affine map from output pixel coordinates to source
pixel coordinates (pixel-center convention, see :mod:`gmrw.core`). The label
for a palindrome walk ``T_f(I1) -> T_f(I2) -> T_b(I1)`` sends each forward
cell to where its source location appears in the backward crop, spread
bilinearly over the neighbouring backward cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from gmrw.core import CoordinateGrid, DimensionError, GMRWError, VideoClip, grid_coordinates

_SNAP = 1e-9


class AugmentationError(GMRWError, ValueError):
    pass


@dataclass(frozen=True)
class AffineAugmentation:
    matrix: np.ndarray  # (2, 3): output pixel -> source pixel
    crop_box: tuple[float, float, float, float]  # (x0, y0, w, h) in pixel-edge units
    output_size: tuple[int, int]  # (H, W)
    source_size: tuple[int, int]  # (H, W)

    def __post_init__(self):
        lin = np.asarray(self.matrix, dtype=np.float64)[:, :2]
        if abs(np.linalg.det(lin)) < 1e-12:
            raise AugmentationError("augmentation is not invertible")

    def to_source(self, xy: np.ndarray) -> np.ndarray:
        m = np.asarray(self.matrix, dtype=np.float64)
        return xy @ m[:, :2].T + m[:, 2]

    def from_source(self, xy: np.ndarray) -> np.ndarray:
        m = np.asarray(self.matrix, dtype=np.float64)
        return np.linalg.solve(m[:, :2], (xy - m[:, 2]).T).T


@dataclass
class WarpedLabel:
    target: np.ndarray  # (n, n) soft assignment, rows of valid cells sum to one
    valid_mask: np.ndarray  # (n,) bool

    @property
    def valid_fraction(self) -> float:
        return float(self.valid_mask.mean())


def crop_augmentation(crop_box, source_size, output_size) -> AffineAugmentation:
    """Affine map for the crop ``(x0, y0, w, h)`` resized to ``output_size``."""
    x0, y0, w, h = (float(v) for v in crop_box)
    sh, sw = source_size
    oh, ow = output_size
    if w <= 0 or h <= 0:
        raise AugmentationError(f"crop box must have positive size, got {crop_box}")
    tol = 1e-9
    if x0 < -tol or y0 < -tol or x0 + w > sw + tol or y0 + h > sh + tol:
        raise AugmentationError(f"crop box {crop_box} leaves the {sh}x{sw} source frame")
    ax, ay = w / ow, h / oh
    matrix = np.array([[ax, 0.0, x0 + 0.5 * ax - 0.5], [0.0, ay, y0 + 0.5 * ay - 0.5]])
    return AffineAugmentation(matrix, (x0, y0, w, h), (int(oh), int(ow)), (int(sh), int(sw)))


def identity_augmentation(size) -> AffineAugmentation:
    h, w = size
    return crop_augmentation((0, 0, w, h), size, size)


def sample_augmentation(rng: np.random.Generator, scale_range, source_size,
                        output_size) -> AffineAugmentation:
    """Uniformly sampled resized crop; ``scale`` is the crop side as a fraction of the frame side."""
    lo, hi = (float(v) for v in scale_range)
    if not (0 < lo <= hi <= 1):
        raise AugmentationError(f"scale range {scale_range} must lie within (0, 1]")
    sh, sw = source_size
    scale = rng.uniform(lo, hi) if hi > lo else lo
    w, h = scale * sw, scale * sh
    x0 = rng.uniform(0.0, sw - w) if sw > w else 0.0
    y0 = rng.uniform(0.0, sh - h) if sh > h else 0.0
    return crop_augmentation((x0, y0, w, h), source_size, output_size)


def sampling_grid(aug: AffineAugmentation, dtype=torch.float32) -> torch.Tensor:
    """Normalized ``grid_sample`` coordinates (1, H, W, 2) for ``aug``."""
    oh, ow = aug.output_size
    sh, sw = aug.source_size
    ys, xs = np.meshgrid(np.arange(oh, dtype=np.float64), np.arange(ow, dtype=np.float64), indexing="ij")
    src = aug.to_source(np.stack([xs, ys], axis=-1).reshape(-1, 2)).reshape(oh, ow, 2)
    norm = np.empty_like(src)
    norm[..., 0] = (2 * src[..., 0] + 1) / sw - 1
    norm[..., 1] = (2 * src[..., 1] + 1) / sh - 1
    return torch.as_tensor(norm, dtype=dtype)[None]


def apply_augmentation(frame, aug: AffineAugmentation):
    """Bilinear resampling of ``frame`` through ``aug``.

    Accepts an H x W x 3 array (returns the same layout) or an (N, C, H, W)
    tensor.
    """
    is_array = not isinstance(frame, torch.Tensor)
    x = torch.as_tensor(np.asarray(frame, dtype=np.float64)).permute(2, 0, 1)[None] if is_array else frame
    if tuple(x.shape[-2:]) != tuple(aug.source_size):
        raise DimensionError(f"frame size {tuple(x.shape[-2:])} does not match augmentation source {aug.source_size}")
    grid = sampling_grid(aug, x.dtype).expand(x.shape[0], -1, -1, -1)
    out = F.grid_sample(x, grid, mode="bilinear", padding_mode="border", align_corners=False)
    if is_array:
        return out[0].permute(1, 2, 0).numpy()
    return out


def _snap(v: np.ndarray) -> np.ndarray:
    r = np.rint(v)
    return np.where(np.abs(v - r) < _SNAP, r, v)


def warp_label(t_f: AffineAugmentation, t_b: AffineAugmentation, grid: CoordinateGrid) -> WarpedLabel:
    """Soft cycle target mapping cells of the ``t_f`` crop onto cells of the ``t_b`` crop."""
    if t_f.source_size != t_b.source_size or t_f.output_size != t_b.output_size:
        raise AugmentationError("forward and backward augmentations must share source and output size")
    n = len(grid)
    s = grid.stride
    offset = (s - 1) / 2
    dest = t_b.from_source(t_f.to_source(grid.coords))
    gx = _snap((dest[:, 0] - offset) / s)
    gy = _snap((dest[:, 1] - offset) / s)
    valid = (gx >= 0) & (gx <= grid.width - 1) & (gy >= 0) & (gy <= grid.height - 1)

    target = np.zeros((n, n), dtype=np.float64)
    x0, y0 = np.floor(gx), np.floor(gy)
    fx, fy = gx - x0, gy - y0
    rows = np.nonzero(valid)[0]
    for dx, dy, wgt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                        (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        r = rows[wgt[rows] > 0]
        cols = ((y0[r] + dy) * grid.width + (x0[r] + dx)).astype(np.int64)
        target[r, cols] += wgt[r]
    return WarpedLabel(target, valid)


def build_palindrome(clip: VideoClip, frame_gap: int, rng: np.random.Generator, *,
                     scale_range=(0.6, 1.0), output_size=None, stride: int = 4,
                     label_warp: bool = True):
    """Sample ``[T_f(I1), T_f(I2), T_b(I1)]`` and its warped cycle label.

    With ``label_warp=False`` the backward copy reuses ``T_f`` and the label is
    the identity.
    """
    frames = np.asarray(clip.frames)
    t = frames.shape[0]
    if frame_gap < 1 or t < frame_gap + 1:
        raise AugmentationError(f"clip of {t} frames is too short for frame gap {frame_gap}")
    source_size = frames.shape[1:3]
    output_size = tuple(output_size) if output_size is not None else tuple(source_size)
    start = int(rng.integers(0, t - frame_gap))
    i1, i2 = frames[start], frames[start + frame_gap]
    t_f = sample_augmentation(rng, scale_range, source_size, output_size)
    t_b = sample_augmentation(rng, scale_range, source_size, output_size) if label_warp else t_f
    out = np.stack([apply_augmentation(i1, t_f), apply_augmentation(i2, t_f), apply_augmentation(i1, t_b)])
    grid = grid_coordinates(output_size[0], output_size[1], stride)
    return out.astype(np.float32), warp_label(t_f, t_b, grid)
