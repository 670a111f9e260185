"""Synthetic sprite videos with exact ground truth, frame-directory loading, batching.

Sprites are textured rectangles moving with constant integer velocity over a
static textured background and bouncing off the canvas borders. Sprites are
drawn in index order, so a higher index is nearer to the camera. Because
positions stay integral, every tracked texel has an exact position and an
exact occlusion flag.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from gmrw.augment import build_palindrome
from gmrw.core import GMRWError, TrackSet, VideoClip

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}


class DataError(GMRWError, ValueError):
    pass


class EmptyInputError(DataError):
    pass


class SourceExhaustedError(DataError):
    pass


@dataclass
class SpriteSceneConfig:
    canvas_size: int = 64
    num_sprites: int = 3
    sprite_size_range: tuple = (12, 24)
    velocity_range: tuple = (-3, 3)  # integer px/frame, per axis
    texture: str = "noise"
    allow_overlap: bool = True
    num_frames: int = 8
    seed: int = 0
    points_per_sprite: int = 8
    texture_sigma: float = 1.0
    background: str = "noise"  # noise | flat

    def validate(self):
        lo, hi = self.sprite_size_range
        if not (1 <= lo <= hi <= self.canvas_size):
            raise DataError(f"sprite sizes {self.sprite_size_range} do not fit a {self.canvas_size} canvas")
        vlo, vhi = self.velocity_range
        if vlo > vhi or max(abs(vlo), abs(vhi)) >= self.canvas_size - hi:
            raise DataError(f"velocity range {self.velocity_range} is not trackable on this canvas")
        if self.texture not in ("noise", "checker"):
            raise DataError(f"unknown texture {self.texture!r}")
        if self.background not in ("noise", "flat"):
            raise DataError(f"unknown background {self.background!r}")
        if self.num_frames < 1 or self.num_sprites < 0 or self.points_per_sprite < 0:
            raise DataError("num_frames must be >= 1; sprite and point counts >= 0")


@dataclass
class Sprite:
    texture: np.ndarray  # (h, w, 3)
    path: np.ndarray  # (T, 2) integer top-left (x, y) per frame


@dataclass
class DatasetSample:
    clip: VideoClip
    gt: TrackSet  # raw tracks; queries sit at each track's first visible frame
    sprites: list = field(default_factory=list)

    def dense_flow(self, t0: int, t1: int) -> np.ndarray:
        """(H, W, 2) ground-truth displacement of the surface visible at each pixel of frame t0."""
        h, w = self.clip.height, self.clip.width
        flow = np.zeros((h, w, 2))
        for sp in self.sprites:
            sh, sw = sp.texture.shape[:2]
            x, y = (int(v) for v in sp.path[t0])
            x0, y0, x1, y1 = max(x, 0), max(y, 0), min(x + sw, w), min(y + sh, h)
            if x0 < x1 and y0 < y1:
                flow[y0:y1, x0:x1] = sp.path[t1] - sp.path[t0]
        return flow


def _texture(rng, shape, kind, sigma):
    h, w = shape
    if kind == "checker":
        cell = int(rng.integers(2, 5))
        yy, xx = np.mgrid[0:h, 0:w]
        pattern = ((yy // cell + xx // cell) % 2)[..., None].astype(np.float64)
        c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
        tex = pattern * c1 + (1 - pattern) * c0 + rng.normal(0, 0.05, (h, w, 3))
    else:
        noise = gaussian_filter(rng.normal(size=(h, w, 3)), sigma=(sigma, sigma, 0))
        noise = (noise - noise.mean()) / (noise.std() + 1e-8)
        tint = rng.uniform(0.25, 0.75, 3)
        tex = tint + 0.22 * noise
    return np.clip(tex, 0.0, 1.0)


def _bounce_path(start, velocity, size, canvas, num_frames):
    path = np.zeros((num_frames, 2), dtype=np.int64)
    pos = np.array(start, dtype=np.int64)
    vel = np.array(velocity, dtype=np.int64)
    limit = np.array([canvas - size[1], canvas - size[0]], dtype=np.int64)  # max x, max y
    for t in range(num_frames):
        path[t] = pos
        nxt = pos + vel
        for k in range(2):
            if nxt[k] < 0:
                nxt[k], vel[k] = -nxt[k], -vel[k]
            elif nxt[k] > limit[k]:
                nxt[k], vel[k] = 2 * limit[k] - nxt[k], -vel[k]
        pos = nxt
    return path


def _overlaps(sprites, t):
    boxes = [(sp.path[t][0], sp.path[t][1], sp.texture.shape[1], sp.texture.shape[0]) for sp in sprites]
    for (x0, y0, w0, h0), (x1, y1, w1, h1) in itertools.combinations(boxes, 2):
        if x0 < x1 + w1 and x1 < x0 + w0 and y0 < y1 + h1 and y1 < y0 + h0:
            return True
    return False


def render_scene(background: np.ndarray, sprites, num_frames: int) -> np.ndarray:
    frames = np.repeat(background[None], num_frames, axis=0).copy()
    canvas_h, canvas_w = background.shape[:2]
    for sp in sprites:
        sh, sw = sp.texture.shape[:2]
        for t in range(num_frames):
            x, y = (int(v) for v in sp.path[t])
            x0, y0 = max(x, 0), max(y, 0)
            x1, y1 = min(x + sw, canvas_w), min(y + sh, canvas_h)
            if x0 < x1 and y0 < y1:
                frames[t, y0:y1, x0:x1] = sp.texture[y0 - y:y1 - y, x0 - x:x1 - x]
    return frames


def sprite_tracks(sprites, points, num_frames: int, canvas: int):
    """Positions and visibility of texel ``points`` [(sprite index, u, v)] under z-order."""
    n = len(points)
    positions = np.zeros((n, num_frames, 2))
    visible = np.zeros((n, num_frames), dtype=bool)
    for i, (k, u, v) in enumerate(points):
        pos = sprites[k].path + np.array([u, v])
        positions[i] = pos
        inside = (pos[:, 0] >= 0) & (pos[:, 0] < canvas) & (pos[:, 1] >= 0) & (pos[:, 1] < canvas)
        covered = np.zeros(num_frames, dtype=bool)
        for front in sprites[k + 1:]:
            fh, fw = front.texture.shape[:2]
            rel = pos - front.path
            covered |= (rel[:, 0] >= 0) & (rel[:, 0] < fw) & (rel[:, 1] >= 0) & (rel[:, 1] < fh)
        visible[i] = inside & ~covered
    return positions, visible


def generate_sprite_clip(config: SpriteSceneConfig, max_attempts: int = 200) -> DatasetSample:
    """Deterministic sprite video and ground-truth tracks for ``config.seed``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    c, t = config.canvas_size, config.num_frames
    background = _background(rng, config)

    for _ in range(max_attempts):
        sprites = []
        for _k in range(config.num_sprites):
            h, w = (int(v) for v in rng.integers(config.sprite_size_range[0],
                                                 config.sprite_size_range[1] + 1, size=2))
            start = (int(rng.integers(0, c - w + 1)), int(rng.integers(0, c - h + 1)))
            vel = rng.integers(config.velocity_range[0], config.velocity_range[1] + 1, size=2)
            tex = _texture(rng, (h, w), config.texture, config.texture_sigma)
            sprites.append(Sprite(tex, _bounce_path(start, vel, (h, w), c, t)))
        if config.allow_overlap or not any(_overlaps(sprites, i) for i in range(t)):
            break
    else:
        raise DataError(f"no overlap-free layout found in {max_attempts} attempts")

    return _finish_sample(rng, background, sprites, config)


def scripted_sprite_clip(paths, sizes, config: SpriteSceneConfig) -> DatasetSample:
    """Sprite clip with caller-given integer top-left ``paths`` (each (T, 2)) and (h, w) ``sizes``.

    Textures, background and tracked points are still drawn from
    ``config.seed``; paths may jump or leave the canvas.
    """
    paths = [np.asarray(p, dtype=np.int64) for p in paths]
    if len(paths) != len(sizes):
        raise DataError(f"{len(paths)} paths but {len(sizes)} sprite sizes")
    t = config.num_frames
    if any(p.shape != (t, 2) for p in paths):
        raise DataError(f"every path must have shape ({t}, 2)")
    rng = np.random.default_rng(config.seed)
    background = _background(rng, config)
    sprites = [Sprite(_texture(rng, (int(h), int(w)), config.texture, config.texture_sigma), p)
               for p, (h, w) in zip(paths, sizes)]
    return _finish_sample(rng, background, sprites, config)


def _background(rng, config):
    c = config.canvas_size
    if config.background == "noise":
        return _texture(rng, (c, c), "noise", config.texture_sigma)
    return np.full((c, c, 3), rng.uniform(0.2, 0.8, 3))


def _finish_sample(rng, background, sprites, config) -> DatasetSample:
    t, c = config.num_frames, config.canvas_size
    points = []
    for k, sp in enumerate(sprites):
        sh, sw = sp.texture.shape[:2]
        for _ in range(config.points_per_sprite):
            points.append((k, int(rng.integers(0, sw)), int(rng.integers(0, sh))))
    frames = render_scene(background, sprites, t).astype(np.float32)
    positions, visible = sprite_tracks(sprites, points, t, c)
    return DatasetSample(VideoClip(frames), _raw_trackset(positions, visible), sprites)


def _raw_trackset(positions, visible) -> TrackSet:
    n, t = visible.shape
    queries = np.zeros((n, 3))
    for i in range(n):
        first = int(np.argmax(visible[i])) if visible[i].any() else 0
        queries[i] = (first, *positions[i, first])
    return TrackSet(positions, visible, queries, [f"p{i}" for i in range(n)])


def sprite_clip_source(config: SpriteSceneConfig, seed: int = 0,
                       limit: Optional[int] = None) -> Iterator[VideoClip]:
    """Endless (or ``limit``-long) stream of clips with seeds ``seed, seed + 1, ...``."""
    counter = itertools.count(seed) if limit is None else range(seed, seed + limit)
    for s in counter:
        yield generate_sprite_clip(replace(config, seed=int(s))).clip


def load_frame_directory(path, resize_to=None) -> VideoClip:
    """Decode lexicographically ordered images in ``path`` into a [0, 1] clip.

    ``resize_to`` is (H, W); without it every frame is resized to the first
    frame's size.
    """
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"{path} is not a directory")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise EmptyInputError(f"no image files in {path}")
    frames = []
    size = None if resize_to is None else (int(resize_to[1]), int(resize_to[0]))  # PIL wants (W, H)
    for f in files:
        try:
            with Image.open(f) as im:
                im = im.convert("RGB")
                if size is None:
                    size = im.size
                if im.size != size:
                    im = im.resize(size, Image.BILINEAR)
                frames.append(np.asarray(im, dtype=np.float32) / 255.0)
        except OSError as exc:
            raise DataError(f"cannot read image {f}: {exc}") from exc
    return VideoClip(np.stack(frames))


def save_frames(clip: VideoClip, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for i, frame in enumerate(np.asarray(clip.frames)):
        p = directory / f"{i:05d}.png"
        Image.fromarray(np.round(np.clip(frame, 0, 1) * 255).astype(np.uint8)).save(p)
        out.append(p)
    return out


@dataclass
class TrainingBatch:
    frames: np.ndarray  # (B, 3, H, W, 3): T_f(I1), T_f(I2), T_b(I1)
    targets: np.ndarray  # (B, n, n)
    valid: np.ndarray  # (B, n)
    frame_gaps: list


def make_training_batch(source: Iterator[VideoClip], batch_size: int, frame_gap_range,
                        rng: np.random.Generator, **palindrome_kwargs) -> TrainingBatch:
    """Draw ``batch_size`` clips and turn each into an augmented palindrome."""
    lo, hi = (int(v) for v in frame_gap_range)
    if not 1 <= lo <= hi:
        raise DataError(f"invalid frame gap range {frame_gap_range}")
    frames, targets, valid, gaps = [], [], [], []
    for _ in range(batch_size):
        try:
            clip = next(source)
        except StopIteration:
            raise SourceExhaustedError("clip source ran out before the batch was complete") from None
        gap = int(rng.integers(lo, hi + 1))
        f, label = build_palindrome(clip, gap, rng, **palindrome_kwargs)
        frames.append(f)
        targets.append(label.target)
        valid.append(label.valid_mask)
        gaps.append(gap)
    return TrainingBatch(np.stack(frames), np.stack(targets).astype(np.float32), np.stack(valid), gaps)
