"""Training objectives: cycle cross-entropy, edge-aware smoothness, Huber supervision."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from gmrw.core import CoordinateGrid, GMRWError, MotionField, ShapeError
from gmrw.matcher import TransitionMatrix

LOG_FLOOR = 1e-9


class UndefinedLossError(GMRWError, ValueError):
    pass


@dataclass
class ObjectiveConfig:
    smoothness_weight: float = 0.1  # lambda_s
    edge_sensitivity: float = 150.0  # lambda_c, colors on a [0, 1] scale
    use_smoothness: bool = True
    huber_delta: float = 1.0  # in grid cells

    def __post_init__(self):
        if self.smoothness_weight < 0:
            raise ValueError(f"smoothness_weight must be >= 0, got {self.smoothness_weight}")
        if self.edge_sensitivity <= 0:
            raise ValueError(f"edge_sensitivity must be > 0, got {self.edge_sensitivity}")


@dataclass
class LossReport:
    crw: torch.Tensor
    smooth: torch.Tensor
    total: torch.Tensor
    valid_row_fraction: float

    def as_floats(self) -> dict:
        return {
            "crw": float(torch.as_tensor(self.crw).detach()),
            "smooth": float(torch.as_tensor(self.smooth).detach()),
            "total": float(torch.as_tensor(self.total).detach()),
            "valid_row_fraction": float(self.valid_row_fraction),
        }


def crw_loss(chained, target, valid_mask=None) -> torch.Tensor:
    """Mean cross-entropy between label rows and walk-return probabilities over valid rows.

    ``chained`` is a :class:`TransitionMatrix` or a (..., n, n) tensor;
    ``target`` is the matching soft label and ``valid_mask`` marks rows that
    take part in the loss.
    """
    probs = chained.probs if isinstance(chained, TransitionMatrix) else chained
    target = torch.as_tensor(target, dtype=probs.dtype, device=probs.device)
    if target.shape != probs.shape:
        raise ShapeError(f"label shape {tuple(target.shape)} != transition shape {tuple(probs.shape)}")
    if valid_mask is None:
        valid = torch.ones(probs.shape[:-1], dtype=torch.bool, device=probs.device)
    else:
        valid = torch.as_tensor(valid_mask, dtype=torch.bool, device=probs.device)
    if not bool(valid.any()):
        raise UndefinedLossError("every label row is masked; the cycle loss is undefined")
    row_ce = -(target * torch.log(probs + LOG_FLOOR)).sum(-1)
    return row_ce[valid].mean()


def expected_flow(a, grid: CoordinateGrid, target_grid: CoordinateGrid | None = None):
    """Expected displacement ``A @ D_target - D_source`` for each source cell.

    Returns a :class:`MotionField` when given a :class:`TransitionMatrix`,
    otherwise a tensor of shape (..., n, 2) so it can sit inside autograd.
    """
    target_grid = grid if target_grid is None else target_grid
    probs = a.probs if isinstance(a, TransitionMatrix) else a
    if probs.shape[-2] != len(grid) or probs.shape[-1] != len(target_grid):
        raise ShapeError(
            f"transition shape {tuple(probs.shape[-2:])} does not match grids "
            f"{len(grid)} -> {len(target_grid)}"
        )
    src = torch.as_tensor(grid.coords, dtype=probs.dtype, device=probs.device)
    dst = torch.as_tensor(target_grid.coords, dtype=probs.dtype, device=probs.device)
    flow = probs @ dst - src
    if isinstance(a, TransitionMatrix):
        return MotionField(flow.detach().cpu().numpy(), grid)
    return flow


def smoothness_loss(flow, image, edge_sensitivity: float = 150.0) -> torch.Tensor:
    """Edge-aware second-order smoothness.

    ``flow`` is (..., h, w, 2) and ``image`` (..., 3, h, w) at the same grid
    resolution. Per direction the curvature magnitude (mean over both flow
    components) is weighted by ``exp(-edge_sensitivity * I_d)`` and averaged
    over interior cells; the two directions are summed.
    """
    flow = torch.as_tensor(flow)
    image = torch.as_tensor(image, dtype=flow.dtype, device=flow.device)
    h, w = flow.shape[-3:-1]
    if image.shape[-2:] != (h, w):
        raise ShapeError(f"image grid {tuple(image.shape[-2:])} does not match flow grid {(h, w)}")
    if h < 3 or w < 3:
        raise ShapeError(f"grid {h}x{w} too small for second differences")
    total = flow.new_zeros(())
    # x direction: interior columns 1..w-2
    d2x = (flow[..., :, 2:, :] - 2 * flow[..., :, 1:-1, :] + flow[..., :, :-2, :]).abs().mean(-1)
    ix = (image[..., :, :, 2:] - image[..., :, :, :-2]).abs().mean(-3) / 2
    total = total + (torch.exp(-edge_sensitivity * ix) * d2x).mean()
    d2y = (flow[..., 2:, :, :] - 2 * flow[..., 1:-1, :, :] + flow[..., :-2, :, :]).abs().mean(-1)
    iy = (image[..., :, 2:, :] - image[..., :, :-2, :]).abs().mean(-3) / 2
    total = total + (torch.exp(-edge_sensitivity * iy) * d2y).mean()
    return total


def downsample_image(images: torch.Tensor, stride: int) -> torch.Tensor:
    """Average-pool (..., 3, H, W) images to the feature grid of ``stride``."""
    return images if stride == 1 else F.avg_pool2d(images, stride)


def total_loss(crw, smooth, config: ObjectiveConfig, valid_row_fraction: float = 1.0) -> LossReport:
    crw = torch.as_tensor(crw)
    smooth = torch.as_tensor(smooth, dtype=crw.dtype)
    if config.use_smoothness and config.smoothness_weight > 0:
        total = crw + config.smoothness_weight * smooth
    else:
        smooth = torch.zeros_like(crw)
        total = crw
    return LossReport(crw, smooth, total, valid_row_fraction)


def supervised_loss(pred_flow, gt_flow, delta: float = 1.0) -> torch.Tensor:
    """Mean Huber loss of the per-cell displacement error norm."""
    pred = torch.as_tensor(pred_flow.flow if isinstance(pred_flow, MotionField) else pred_flow)
    gt = gt_flow.flow if isinstance(gt_flow, MotionField) else gt_flow
    gt = torch.as_tensor(np.asarray(gt) if not isinstance(gt, torch.Tensor) else gt,
                         dtype=pred.dtype, device=pred.device)
    if pred.shape != gt.shape:
        raise ShapeError(f"flow shapes differ: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    sq = ((pred - gt) ** 2).sum(-1)
    linear = sq > delta ** 2
    norm = torch.sqrt(torch.where(linear, sq, torch.ones_like(sq)))
    return torch.where(linear, delta * (norm - 0.5 * delta), 0.5 * sq).mean()
