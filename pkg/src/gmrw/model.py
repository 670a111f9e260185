"""The two-frame matching network and its checkpoint format.

Checkpoint layout (a ``torch.save`` dictionary, format version 1)::

    {
        "format": "gmrw-checkpoint",
        "version": 1,
        "config": {"backbone": {...}, "matcher": {...}},
        "parameters": {name: tensor, ...},   # state_dict order
        "shapes": {name: [dims...]},
        "extra": {...},                      # free-form metadata (step, run config)
    }
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn as nn

from gmrw.backbone import Backbone, BackboneConfig, upsample_for_stride
from gmrw.core import GMRWError
from gmrw.matcher import Matcher, MatcherConfig, transition_probs

CHECKPOINT_FORMAT = "gmrw-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(GMRWError, ValueError):
    pass


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    matcher: MatcherConfig = field(default_factory=MatcherConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(BackboneConfig(**d.get("backbone", {})), MatcherConfig(**d.get("matcher", {})))


class GMRW(nn.Module):
    """CNN features + positional encoding + global-matching transformer."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        self.backbone = Backbone(self.config.backbone)
        self.matcher = Matcher(self.config.backbone.feature_dim, self.config.matcher)

    @property
    def temperature(self) -> float:
        return self.matcher.temperature

    def features(self, frames: torch.Tensor, stride: int = 4) -> torch.Tensor:
        """(N, 3, H, W) -> (N, d, H/stride, W/stride)."""
        c = self.config.backbone.downsample_factor
        return self.backbone(upsample_for_stride(frames, stride, c))

    def correlate(self, feat_a: torch.Tensor, feat_b: torch.Tensor):
        return self.matcher(feat_a, feat_b)

    def transitions_from_features(self, feat_a, feat_b):
        """Forward and backward transition probabilities from one transformer pass."""
        f_a, f_b = self.matcher(feat_a, feat_b)
        tau = self.temperature
        return transition_probs(f_a, f_b, tau), transition_probs(f_b, f_a, tau)

    def pair_transitions(self, frames_a: torch.Tensor, frames_b: torch.Tensor, stride: int = 4):
        """(A_ab, A_ba), each (N, n, n), for batched frame pairs (N, 3, H, W)."""
        n = frames_a.shape[0]
        feats = self.features(torch.cat([frames_a, frames_b]), stride)
        return self.transitions_from_features(feats[:n], feats[n:])

    def palindrome(self, frames: torch.Tensor, stride: int = 4):
        """Transition matrices of the walk I1 -> I2 -> I1' for (B, 3, 3, H, W) inputs.

        Returns ``(a_fwd, a_bwd)``; the cycle matrix is ``a_fwd @ a_bwd``.
        """
        b = frames.shape[0]
        feats = self.features(frames.flatten(0, 1), stride)
        feats = feats.view(b, 3, *feats.shape[1:])
        f1, f2 = self.matcher(feats[:, 0], feats[:, 1])
        g2, g1b = self.matcher(feats[:, 1], feats[:, 2])
        tau = self.temperature
        return transition_probs(f1, f2, tau), transition_probs(g2, g1b, tau)


def save_checkpoint(model: GMRW, path, extra: dict | None = None) -> None:
    state = {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "parameters": state,
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> tuple[GMRW, dict]:
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:  # corrupt or foreign file
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')}")
    config = ModelConfig.from_dict(payload["config"])
    if expected_config is not None and expected_config.to_dict() != config.to_dict():
        raise CheckpointError("checkpoint model config does not match the requested config")
    model = GMRW(config)
    params = payload["parameters"]
    for name, shape in payload["shapes"].items():
        if list(params[name].shape) != list(shape):
            raise CheckpointError(f"parameter {name} has shape {list(params[name].shape)}, header says {shape}")
    try:
        model.load_state_dict(params)
    except RuntimeError as exc:
        raise CheckpointError(str(exc)) from exc
    model.eval()
    return model, payload.get("extra", {})
