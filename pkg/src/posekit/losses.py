"""Training objectives for the position and orientation branches.

All functions take batched tensors (leading batch dimension) and return
per-sample losses unless noted; a single sample is a batch of one.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .codec import encode_soft
from .errors import InvalidConfig, ShapeMismatch, ZeroNormGroundTruth
from .model import normalize_quaternion_output


@dataclass
class LossWeights:
    lambda_ori: float = 1.0
    epsilon_clamp: float = 1e-7
    distance_weighted: bool = False

    def __post_init__(self):
        if self.lambda_ori < 0:
            raise InvalidConfig("lambda_ori must be >= 0")
        if not 0 < self.epsilon_clamp < 1e-3:
            raise InvalidConfig("epsilon_clamp must be in (0, 1e-3)")


def _gt_norm(t_gt: torch.Tensor) -> torch.Tensor:
    norm = t_gt.norm(dim=-1)
    if torch.any(norm <= 0):
        raise ZeroNormGroundTruth("ground-truth position has zero norm")
    return norm


def position_loss(t_pred: torch.Tensor, t_gt: torch.Tensor) -> torch.Tensor:
    """Relative position error ``||t_pred - t_gt|| / ||t_gt||``."""
    return (t_pred - t_gt).norm(dim=-1) / _gt_norm(t_gt)


def orientation_regression_loss(q_pred, q_gt, eps: float = 1e-7) -> torch.Tensor:
    """``arccos(|<q_pred, q_gt>|)``, half the rotation angle between them."""
    dot = (q_pred * q_gt).sum(dim=-1).abs()
    return torch.acos(dot.clamp(0.0, 1.0 - eps))


def orientation_regression_loss_distance_weighted(q_pred, q_gt, t_gt, eps: float = 1e-7):
    """Orientation loss scaled by inverse target distance (rad/m)."""
    return orientation_regression_loss(q_pred, q_gt, eps) / _gt_norm(t_gt)


def soft_classification_nll(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of soft target(s) against ``softmax(logits)``."""
    if logits.shape != target.shape:
        raise ShapeMismatch(f"logits {tuple(logits.shape)} vs target {tuple(target.shape)}")
    return -(target * torch.log_softmax(logits, dim=-1)).sum(dim=-1)


def combined_loss(outputs, labels, weights: LossWeights, mode: str, grid=None):
    """Mean batch objective ``position + lambda_ori * orientation``.

    ``outputs`` is ``(positions, orientation_out)`` from the network;
    ``labels`` is a dict with ``position`` (B, 3), ``orientation`` (B, 4) and,
    for ``mode="softclass"``, ``soft_target`` (B, n^3); when the soft target
    is absent it is encoded from ``orientation`` with ``grid``.
    Returns ``(total, {"position": ..., "orientation": ...})`` with the
    per-term means detached for logging.
    """
    t_pred, ori_out = outputs
    t_gt = labels["position"]
    pos = position_loss(t_pred, t_gt)
    if mode == "regression":
        q_pred = normalize_quaternion_output(ori_out)
        if weights.distance_weighted:
            ori = orientation_regression_loss_distance_weighted(
                q_pred, labels["orientation"], t_gt, weights.epsilon_clamp
            )
        else:
            ori = orientation_regression_loss(q_pred, labels["orientation"], weights.epsilon_clamp)
    elif mode == "softclass":
        target = labels.get("soft_target")
        if target is None:
            if grid is None:
                raise InvalidConfig("softclass loss needs soft_target or a grid")
            q = labels["orientation"].detach().cpu().numpy()
            target = torch.as_tensor(encode_soft(q, grid), dtype=ori_out.dtype)
        ori = soft_classification_nll(ori_out, target)
    else:
        raise InvalidConfig(f"unknown loss mode {mode!r}")
    total = (pos + weights.lambda_ori * ori).mean()
    return total, {"position": pos.mean().detach(), "orientation": ori.mean().detach()}
