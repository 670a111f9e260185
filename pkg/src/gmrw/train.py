"""Run configuration and the optimization loop."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import yaml

from gmrw.backbone import BackboneConfig, to_tensor
from gmrw.core import GMRWError, grid_coordinates
from gmrw.data import SpriteSceneConfig, generate_sprite_clip, make_training_batch, sprite_clip_source
from gmrw.matcher import MatcherConfig
from gmrw.metrics import MetricsConfig
from gmrw.model import GMRW, ModelConfig, save_checkpoint
from gmrw.objective import (
    ObjectiveConfig,
    crw_loss,
    downsample_image,
    expected_flow,
    smoothness_loss,
    supervised_loss,
    total_loss,
)
from gmrw.tracker import TrackerConfig

log = logging.getLogger(__name__)

LOSS_LOG_HEADER = "step,crw,smooth,total,valid_row_fraction"


class NonFiniteLossError(GMRWError, FloatingPointError):
    pass


@dataclass
class AugmentConfig:
    scale_range: tuple = (0.6, 1.0)
    label_warp: bool = True
    train_stride: int = 4
    frame_gap_range: tuple = (1, 4)


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-4
    steps: int = 1000
    batch_size: int = 4
    seed: int = 0
    log_every: int = 1
    checkpoint_every: int = 0  # 0 writes only the final checkpoint
    supervised: bool = False


@dataclass
class PathsConfig:
    checkpoint: str = "runs/model.pt"
    log: str = "runs/loss.csv"


@dataclass
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    data: SpriteSceneConfig = field(default_factory=SpriteSceneConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(self.backbone, self.matcher)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        kwargs = {}
        for f in dataclasses.fields(cls):
            sub_cls = f.default_factory
            values = dict(d.get(f.name) or {})
            known = {g.name: g for g in dataclasses.fields(sub_cls)}
            unknown = set(values) - set(known)
            if unknown:
                raise ValueError(f"unknown keys in section {f.name!r}: {sorted(unknown)}")
            for k, v in values.items():
                if isinstance(v, list):
                    values[k] = tuple(v)
            kwargs[f.name] = sub_cls(**values)
        return cls(**kwargs)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()) or {})


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
    torch.use_deterministic_algorithms(True)


def palindrome_loss(model: GMRW, frames: torch.Tensor, targets: torch.Tensor, valid: torch.Tensor,
                    objective: ObjectiveConfig, stride: int = 4):
    """Cycle loss of a batch of (B, 3, 3, H, W) palindromes plus edge-aware smoothness."""
    a_fwd, a_bwd = model.palindrome(frames, stride)
    crw = crw_loss(a_fwd @ a_bwd, targets, valid)
    h, w = frames.shape[-2:]
    grid = grid_coordinates(h, w, stride)
    smooth = torch.zeros((), dtype=crw.dtype)
    if objective.use_smoothness and objective.smoothness_weight > 0:
        shape = (frames.shape[0], grid.height, grid.width, 2)
        for probs, image in ((a_fwd, frames[:, 0]), (a_bwd, frames[:, 1])):
            flow = expected_flow(probs, grid).reshape(shape)
            smooth = smooth + smoothness_loss(flow, downsample_image(image, stride),
                                              objective.edge_sensitivity) / 2
    return total_loss(crw, smooth, objective, float(valid.float().mean()))


def _supervised_batch(config: RunConfig, rng: np.random.Generator, seed: int):
    stride = config.augment.train_stride
    lo, hi = config.augment.frame_gap_range
    frames_a, frames_b, flows = [], [], []
    for i in range(config.optimizer.batch_size):
        sample = generate_sprite_clip(replace(config.data, seed=seed + i, num_frames=hi + 1))
        gap = int(rng.integers(lo, hi + 1))
        t0 = int(rng.integers(0, sample.clip.num_frames - gap))
        frames_a.append(sample.clip.frames[t0])
        frames_b.append(sample.clip.frames[t0 + gap])
        dense = sample.dense_flow(t0, t0 + gap)
        h, w = dense.shape[:2]
        pooled = dense.reshape(h // stride, stride, w // stride, stride, 2).mean((1, 3))
        flows.append(pooled.reshape(-1, 2))
    return np.stack(frames_a), np.stack(frames_b), np.stack(flows)


def train(config: RunConfig, checkpoint_path=None, log_path=None, progress=None) -> GMRW:
    """Optimize a fresh model under ``config``; writes the checkpoint and loss log."""
    # sharp walks push softmax tails into subnormals, which are very slow on CPU
    torch.set_flush_denormal(True)
    try:
        return _train(config, checkpoint_path, log_path, progress)
    finally:
        torch.set_flush_denormal(False)


def _train(config: RunConfig, checkpoint_path, log_path, progress) -> GMRW:
    opt_cfg = config.optimizer
    checkpoint_path = Path(checkpoint_path or config.paths.checkpoint)
    log_path = Path(log_path or config.paths.log)
    seed_everything(opt_cfg.seed)
    rng = np.random.default_rng(opt_cfg.seed)
    model = GMRW(config.model)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=opt_cfg.learning_rate)
    aug = config.augment
    stride = aug.train_stride
    source = sprite_clip_source(replace(config.data, num_frames=max(config.data.num_frames,
                                                                   aug.frame_gap_range[1] + 1)),
                                seed=config.data.seed)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    started = time.time()
    with open(log_path, "w") as log_file:
        log_file.write(LOSS_LOG_HEADER + "\n")
        for step in range(opt_cfg.steps):
            if opt_cfg.supervised:
                fa, fb, gt = _supervised_batch(config, rng, config.data.seed + step * opt_cfg.batch_size)
                a_ab, _ = model.pair_transitions(to_tensor(fa), to_tensor(fb), stride)
                grid = grid_coordinates(fa.shape[1], fa.shape[2], stride)
                pred = expected_flow(a_ab, grid) / stride
                loss = supervised_loss(pred, torch.as_tensor(gt / stride, dtype=pred.dtype),
                                       config.objective.huber_delta)
                report = total_loss(loss, 0.0, replace(config.objective, use_smoothness=False))
            else:
                batch = make_training_batch(source, opt_cfg.batch_size, aug.frame_gap_range, rng,
                                            scale_range=aug.scale_range, stride=stride,
                                            label_warp=aug.label_warp)
                frames = torch.as_tensor(batch.frames).permute(0, 1, 4, 2, 3)
                report = palindrome_loss(model, frames, torch.as_tensor(batch.targets),
                                         torch.as_tensor(batch.valid), config.objective, stride)
            values = report.as_floats()
            if not all(np.isfinite(v) for v in values.values()):
                raise NonFiniteLossError(
                    f"non-finite loss at step {step}: "
                    + ", ".join(f"{k}={v}" for k, v in values.items())
                )
            optimizer.zero_grad()
            report.total.backward()
            optimizer.step()
            if opt_cfg.log_every and step % opt_cfg.log_every == 0:
                log_file.write(f"{step},{values['crw']:.6f},{values['smooth']:.6f},"
                               f"{values['total']:.6f},{values['valid_row_fraction']:.6f}\n")
            if progress is not None:
                progress(step, values)
            if step % 100 == 0:
                log.info("step %d crw=%.4f smooth=%.4f total=%.4f (%.0fs)", step, values["crw"],
                         values["smooth"], values["total"], time.time() - started)
            if opt_cfg.checkpoint_every and step and step % opt_cfg.checkpoint_every == 0:
                save_checkpoint(model, checkpoint_path, {"step": step, "run_config": config.to_dict()})
    model.eval()
    save_checkpoint(model, checkpoint_path, {"step": opt_cfg.steps, "run_config": config.to_dict()})
    return model


def read_loss_log(path) -> dict:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    names = LOSS_LOG_HEADER.split(",")
    return {name: rows[:, i] for i, name in enumerate(names)}
